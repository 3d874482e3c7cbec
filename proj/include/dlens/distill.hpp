#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dlens/divergence.hpp"
#include "dlens/lens.hpp"
#include "dlens/model.hpp"
#include "dlens/synth_data.hpp"
#include "dlens/tensor.hpp"

namespace dlens {

// Ordered student->teacher layer pairs (l, l'). Strictly increasing in both
// coordinates, 1-based, no duplicates.
struct LayerMapping {
    std::vector<std::pair<int, int>> pairs;

    void validate(int l_s, int l_t) const;
    bool empty() const { return pairs.empty(); }
    std::string to_string() const;
    static LayerMapping parse(const std::string& text);  // "1:2,2:4"
};

// K equally spaced intermediate layers, final layer excluded:
// l_k = round_half_up(k * L_S / (K+1)) for k = 1..K.
std::vector<int> select_student_layers(int l_s, int k);

// l' = round_half_up(l * L_T / L_S), clamped to [1, L_T].
LayerMapping uniform_map(const std::vector<int>& student_layers, int l_s, int l_t);

enum class TaskLossKind { SFT, FKL, RKL, JSD, JEFFREYS };
std::string to_string(TaskLossKind kind);
TaskLossKind task_loss_from_string(const std::string& name);

enum class MaskMode { ResponseOnly, AllPositions };
std::string to_string(MaskMode mode);
MaskMode mask_mode_from_string(const std::string& name);

struct OptimConfig {
    double lr_initial = 3e-3;
    double lr_final = 1e-7;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Cosine decay from lr_initial to lr_final across `steps` updates.
double cosine_lr(const OptimConfig& cfg, int step, int steps);

// Adaptive per-parameter moments with decoupled weight decay.
class AdamW {
  public:
    AdamW(std::vector<Tensor> params, OptimConfig cfg);
    void step(double lr);
    void zero_grad();

  private:
    std::vector<Tensor> params_;
    OptimConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    int64_t t_ = 0;
};

// Desk-scale defaults (teacher twice the student depth, shared vocab).
ModelConfig desk_teacher_config();
ModelConfig desk_student_config();

struct TeacherTrainConfig {
    ModelConfig model = desk_teacher_config();
    int steps = 2000;
    int batch_size = 32;
    OptimConfig optim;
    MaskMode mask_mode = MaskMode::ResponseOnly;
    uint64_t seed = 0;

    void validate() const;
};

struct DistillConfig {
    std::string teacher_ckpt;          // path (informational when passed in-process)
    ModelConfig student = desk_student_config();
    std::string student_init;          // optional checkpoint to start from
    TaskLossKind task_loss = TaskLossKind::RKL;
    DivergenceKind inter_loss = DivergenceKind::JSD;
    double lambda = 1.0;
    int k_layers = 2;  // 0 = no intermediate supervision (plain KD baseline)
    int steps = 2000;
    int batch_size = 32;
    OptimConfig optim;
    LensConfig lens;
    MaskMode mask_mode = MaskMode::ResponseOnly;
    uint64_t seed = 0;

    void validate() const;
};

struct StepMetrics {
    int step = 0;
    double l_task = 0.0;
    double l_inter = 0.0;
    double l_total = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;
};

struct TrainRun {
    nlohmann::json config_snapshot;
    std::vector<StepMetrics> metrics;
    ModelCheckpoint final_model;
    std::string checkpoint_path;  // set when a run directory was written
};

// Supervised token batch: inputs [B,T] with PAD tails, one target and one
// mask weight per position.
struct PackedBatch {
    TokenBatch inputs;
    std::vector<int32_t> targets;
    std::vector<double> weights;
};

PackedBatch pack_examples(const std::vector<const Example*>& examples, MaskMode mask_mode,
                          int max_seq_len);

// L_total = L_task + lambda * L_inter (exact affine combination).
double total_loss(double task, double inter, double lambda);

// Mean divergence between lensed distributions over the mapped pairs,
// token-averaged with `row_weights`. Gradient flows through the student trace.
Tensor intermediate_loss(const ForwardTrace& teacher_trace, const ForwardTrace& student_trace,
                         const LayerMapping& mapping, DivergenceKind kind,
                         const LensConfig& lens_cfg, const ModelCheckpoint& teacher,
                         const ModelCheckpoint& student, const Tensor& row_weights);

// Cross-entropy training of a fresh model on the corpus.
TrainRun train_teacher(const TeacherTrainConfig& cfg, const Corpus& corpus,
                       const std::string& run_dir = "");

// Algorithm: per step, forward both models (teacher frozen), task loss on the
// final distributions, intermediate loss over the layer mapping, AdamW update
// with cosine LR, metrics emitted per step.
TrainRun distill(const DistillConfig& cfg, const ModelCheckpoint& teacher, const Corpus& corpus,
                 const std::string& run_dir = "");

// Masked held-out per-token cross entropy of a model over examples.
double heldout_ce(const ModelCheckpoint& ckpt, const std::vector<Example>& examples,
                  MaskMode mask_mode, int batch_size = 32);

// Run-directory helpers shared with the CLI.
void write_run_dir(const std::string& dir, const nlohmann::json& config,
                   const std::vector<StepMetrics>& metrics, const ModelCheckpoint& final_model);
std::vector<StepMetrics> read_metrics_file(const std::string& path);

}  // namespace dlens
