#include "dlens/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dlens/errors.hpp"
#include "dlens/rng.hpp"

namespace dlens {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

// round_half_up(a / b) for positive integers, exact in integer arithmetic
int round_half_up_div(int64_t a, int64_t b) {
    return static_cast<int>((2 * a + b) / (2 * b));
}

}  // namespace

// ---------------------------------------------------------------------------
// Layer mapping

void LayerMapping::validate(int l_s, int l_t) const {
    int prev_l = 0, prev_lp = 0;
    for (const auto& [l, lp] : pairs) {
        if (l < 1 || l > l_s || lp < 1 || lp > l_t)
            throw ConfigError("LayerMapping: layer index out of range");
        if (l <= prev_l || lp <= prev_lp)
            throw ConfigError("LayerMapping: pairs must be strictly increasing");
        prev_l = l;
        prev_lp = lp;
    }
}

std::string LayerMapping::to_string() const {
    std::string out;
    for (size_t i = 0; i < pairs.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(pairs[i].first) + ":" + std::to_string(pairs[i].second);
    }
    return out;
}

LayerMapping LayerMapping::parse(const std::string& text) {
    LayerMapping mapping;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos)
            throw ConfigError("LayerMapping: expected l:l' pairs, got " + item);
        try {
            mapping.pairs.emplace_back(std::stoi(item.substr(0, colon)),
                                       std::stoi(item.substr(colon + 1)));
        } catch (const std::exception&) {
            throw ConfigError("LayerMapping: cannot parse pair " + item);
        }
    }
    if (mapping.pairs.empty()) throw ConfigError("LayerMapping: empty mapping");
    return mapping;
}

std::vector<int> select_student_layers(int l_s, int k) {
    if (k < 1 || k > l_s - 1)
        throw ConfigError("select_student_layers: K must satisfy 1 <= K <= L_S - 1");
    std::vector<int> layers(k);
    for (int i = 1; i <= k; ++i)
        layers[i - 1] = round_half_up_div(static_cast<int64_t>(i) * l_s, k + 1);
    return layers;
}

LayerMapping uniform_map(const std::vector<int>& student_layers, int l_s, int l_t) {
    if (student_layers.empty()) throw ConfigError("uniform_map: empty layer list");
    if (l_t < l_s) throw ConfigError("uniform_map: L_T must be >= L_S");
    LayerMapping mapping;
    for (int l : student_layers) {
        int lp = round_half_up_div(static_cast<int64_t>(l) * l_t, l_s);
        lp = std::clamp(lp, 1, l_t);
        mapping.pairs.emplace_back(l, lp);
    }
    mapping.validate(l_s, l_t);
    return mapping;
}

// ---------------------------------------------------------------------------
// Enums

std::string to_string(TaskLossKind kind) {
    switch (kind) {
        case TaskLossKind::SFT: return "sft";
        case TaskLossKind::FKL: return "fkl";
        case TaskLossKind::RKL: return "rkl";
        case TaskLossKind::JSD: return "jsd";
        case TaskLossKind::JEFFREYS: return "jeffreys";
    }
    return "?";
}

TaskLossKind task_loss_from_string(const std::string& name) {
    if (name == "sft") return TaskLossKind::SFT;
    if (name == "fkl") return TaskLossKind::FKL;
    if (name == "rkl") return TaskLossKind::RKL;
    if (name == "jsd") return TaskLossKind::JSD;
    if (name == "jeffreys" || name == "jd") return TaskLossKind::JEFFREYS;
    throw ConfigError("unknown task loss: " + name);
}

std::string to_string(MaskMode mode) {
    return mode == MaskMode::ResponseOnly ? "response" : "all";
}

MaskMode mask_mode_from_string(const std::string& name) {
    if (name == "response") return MaskMode::ResponseOnly;
    if (name == "all") return MaskMode::AllPositions;
    throw ConfigError("unknown mask mode: " + name + " (expected response|all)");
}

// ---------------------------------------------------------------------------
// Optimizer

double cosine_lr(const OptimConfig& cfg, int step, int steps) {
    const double progress = steps > 1 ? static_cast<double>(step) / (steps - 1) : 1.0;
    return cfg.lr_final +
           0.5 * (cfg.lr_initial - cfg.lr_final) * (1.0 + std::cos(kPi * progress));
}

AdamW::AdamW(std::vector<Tensor> params, OptimConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void AdamW::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

void AdamW::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = params_[pi];
        if (!p.has_grad()) continue;
        auto data = p.mutable_data();
        const auto grad = p.grad();
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (size_t i = 0; i < m.size(); ++i) {
            const double g = grad[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            data[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) +
                             cfg_.weight_decay * data[i]);
        }
    }
}

// ---------------------------------------------------------------------------
// Configs

ModelConfig desk_teacher_config() {
    return ModelConfig{.n_layers = 6, .d_model = 64, .n_heads = 4, .vocab_size = 64,
                       .max_seq_len = 48, .tie_unembedding = false};
}

ModelConfig desk_student_config() {
    return ModelConfig{.n_layers = 3, .d_model = 32, .n_heads = 2, .vocab_size = 64,
                       .max_seq_len = 48, .tie_unembedding = false};
}

void TeacherTrainConfig::validate() const {
    model.validate();
    if (steps < 1 || batch_size < 1) throw ConfigError("train config: steps/batch must be >= 1");
    if (!(optim.lr_initial > 0.0) || !(optim.lr_final > 0.0))
        throw ConfigError("train config: learning rates must be positive");
}

void DistillConfig::validate() const {
    student.validate();
    lens.validate();
    if (steps < 1 || batch_size < 1) throw ConfigError("distill: steps/batch must be >= 1");
    if (lambda < 0.0) throw ConfigError("distill: lambda must be >= 0");
    if (k_layers < 0 || k_layers > student.n_layers - 1)
        throw ConfigError("distill: K must satisfy 0 <= K <= L_S - 1");
    if (!(optim.lr_initial > 0.0) || !(optim.lr_final > 0.0))
        throw ConfigError("distill: learning rates must be positive");
}

// ---------------------------------------------------------------------------
// Batching

PackedBatch pack_examples(const std::vector<const Example*>& examples, MaskMode mask_mode,
                          int max_seq_len) {
    if (examples.empty()) throw std::invalid_argument("pack_examples: empty batch");
    int64_t t_max = 0;
    for (const Example* ex : examples) {
        const int64_t n = static_cast<int64_t>(ex->prompt_ids.size()) +
                          static_cast<int64_t>(ex->response_ids.size()) + 2;
        if (n - 1 > max_seq_len)
            throw ConfigError("pack_examples: sequence exceeds model max_seq_len");
        t_max = std::max(t_max, n - 1);
    }
    const int64_t b = static_cast<int64_t>(examples.size());
    PackedBatch batch;
    batch.inputs.batch = b;
    batch.inputs.seq = t_max;
    batch.inputs.ids.assign(b * t_max, kPadId);
    batch.targets.assign(b * t_max, kPadId);
    batch.weights.assign(b * t_max, 0.0);
    for (int64_t r = 0; r < b; ++r) {
        const Example* ex = examples[r];
        std::vector<int32_t> seq;
        seq.reserve(ex->prompt_ids.size() + ex->response_ids.size() + 2);
        seq.push_back(kBosId);
        seq.insert(seq.end(), ex->prompt_ids.begin(), ex->prompt_ids.end());
        seq.insert(seq.end(), ex->response_ids.begin(), ex->response_ids.end());
        seq.push_back(kEosId);
        const int64_t n = static_cast<int64_t>(seq.size());
        const int64_t prompt_end = static_cast<int64_t>(ex->prompt_ids.size());  // s index of last prompt token
        for (int64_t t = 0; t < n - 1; ++t) {
            batch.inputs.ids[r * t_max + t] = seq[t];
            batch.targets[r * t_max + t] = seq[t + 1];
            const bool supervised = mask_mode == MaskMode::AllPositions
                                        ? true
                                        : (t + 1 > prompt_end);
            batch.weights[r * t_max + t] = supervised ? 1.0 : 0.0;
        }
    }
    return batch;
}

double total_loss(double task, double inter, double lambda) {
    if (!std::isfinite(task) || !std::isfinite(inter))
        throw NumericError("total_loss: non-finite inputs");
    return task + lambda * inter;
}

// ---------------------------------------------------------------------------
// Intermediate loss

namespace {

// Indices of rows with nonzero weight. Losses are computed on the gathered
// rows only; zero-weight rows contribute exact zeros either way, so the
// compact path is bitwise identical and roughly halves the lens work.
std::vector<int64_t> supervised_rows(const Tensor& row_weights) {
    std::vector<int64_t> idx;
    const auto w = row_weights.data();
    for (int64_t i = 0; i < row_weights.numel(); ++i)
        if (w[i] != 0.0) idx.push_back(i);
    if (idx.empty()) throw std::invalid_argument("loss: no supervised positions");
    return idx;
}

Tensor gather_weights(const Tensor& row_weights, const std::vector<int64_t>& idx) {
    std::vector<double> w(idx.size());
    const auto full = row_weights.data();
    for (size_t i = 0; i < idx.size(); ++i) w[i] = full[idx[i]];
    return Tensor::from_data({static_cast<int64_t>(idx.size())}, std::move(w));
}

Tensor flatten_rows(const Tensor& t) {
    const int64_t c = t.dim(-1);
    return reshape(t, {t.numel() / c, c});
}

}  // namespace

Tensor intermediate_loss(const ForwardTrace& teacher_trace, const ForwardTrace& student_trace,
                         const LayerMapping& mapping, DivergenceKind kind,
                         const LensConfig& lens_cfg, const ModelCheckpoint& teacher,
                         const ModelCheckpoint& student, const Tensor& row_weights) {
    if (mapping.empty()) throw std::invalid_argument("intermediate_loss: empty mapping");
    if (teacher.config.vocab_size != student.config.vocab_size)
        throw ConfigError("intermediate_loss: teacher/student vocab mismatch");
    mapping.validate(student.config.n_layers, teacher.config.n_layers);
    const Tensor& t_gain = teacher.param("final_norm.gain");
    const Tensor& t_bias = teacher.param("final_norm.bias");
    const Tensor& s_gain = student.param("final_norm.gain");
    const Tensor& s_bias = student.param("final_norm.bias");
    const auto idx = supervised_rows(row_weights);
    const Tensor w = gather_weights(row_weights, idx);
    Tensor acc;
    for (const auto& [l, lp] : mapping.pairs) {
        Tensor hp = gather_rows(flatten_rows(teacher_trace.hidden_states[lp]), idx);
        Tensor hq = gather_rows(flatten_rows(student_trace.hidden_states[l]), idx);
        Tensor p = logit_lens(hp, teacher.unembedding(), lens_cfg, &t_gain, &t_bias);
        Tensor q = logit_lens(hq, student.unembedding(), lens_cfg, &s_gain, &s_bias);
        Tensor pair_loss = divergence_loss(kind, p, q, w);
        acc = acc.defined() ? add(acc, pair_loss) : pair_loss;
    }
    return scale(acc, 1.0 / static_cast<double>(mapping.pairs.size()));
}

// ---------------------------------------------------------------------------
// Training loops

namespace {

std::vector<Tensor> ordered_params(ModelCheckpoint& ckpt) {
    std::vector<Tensor> out;
    for (const std::string& name : ModelCheckpoint::param_names(ckpt.config))
        out.push_back(ckpt.param(name));
    return out;
}

void check_corpus_fits(const Corpus& corpus, const ModelConfig& model) {
    if (corpus.train.empty()) throw ConfigError("training: dataset is empty");
    if (corpus.spec.vocab_size != model.vocab_size)
        throw ConfigError("training: corpus/model vocab_size mismatch");
    if (corpus.spec.max_len + 1 > model.max_seq_len)
        throw ConfigError("training: corpus sequences exceed model max_seq_len");
}

std::vector<const Example*> sample_batch(const std::vector<Example>& pool, int batch_size,
                                         Rng& rng) {
    std::vector<const Example*> out(batch_size);
    for (int i = 0; i < batch_size; ++i)
        out[i] = &pool[rng.uniform_int(static_cast<int64_t>(pool.size()))];
    return out;
}

Tensor task_loss_tensor(TaskLossKind kind, const ForwardTrace& student_trace,
                        const ForwardTrace& teacher_trace, const PackedBatch& batch,
                        const Tensor& row_weights) {
    const auto idx = supervised_rows(row_weights);
    const Tensor w = gather_weights(row_weights, idx);
    Tensor student_logits = gather_rows(flatten_rows(student_trace.logits), idx);
    if (kind == TaskLossKind::SFT) {
        std::vector<int32_t> targets(idx.size());
        std::vector<double> weights(idx.size());
        for (size_t i = 0; i < idx.size(); ++i) {
            targets[i] = batch.targets[idx[i]];
            weights[i] = batch.weights[idx[i]];
        }
        return cross_entropy(student_logits, targets, weights);
    }
    Tensor teacher_probs = softmax(gather_rows(flatten_rows(teacher_trace.logits), idx), -1);
    Tensor student_probs = softmax(student_logits, -1);
    DivergenceKind div;
    switch (kind) {
        case TaskLossKind::FKL: div = DivergenceKind::FKL; break;
        case TaskLossKind::RKL: div = DivergenceKind::RKL; break;
        case TaskLossKind::JSD: div = DivergenceKind::JSD; break;
        case TaskLossKind::JEFFREYS: div = DivergenceKind::JEFFREYS; break;
        default: throw std::logic_error("task_loss_tensor: unreachable");
    }
    return divergence_loss(div, teacher_probs, student_probs, w);
}

}  // namespace

void write_run_dir(const std::string& dir, const nlohmann::json& config,
                   const std::vector<StepMetrics>& metrics, const ModelCheckpoint& final_model) {
    fs::create_directories(dir);
    {
        std::ofstream f(fs::path(dir) / "config.json", std::ios::trunc);
        if (!f) throw IoError("write_run_dir: cannot write config.json");
        f << config.dump(2) << "\n";
    }
    {
        std::ofstream f(fs::path(dir) / "metrics.jsonl", std::ios::trunc);
        if (!f) throw IoError("write_run_dir: cannot write metrics.jsonl");
        for (const StepMetrics& m : metrics) {
            nlohmann::json line = {{"step", m.step},     {"l_task", m.l_task},
                                   {"l_inter", m.l_inter}, {"l_total", m.l_total},
                                   {"lr", m.lr},         {"wall_ms", m.wall_ms}};
            f << line.dump() << "\n";
        }
    }
    save_checkpoint(final_model, (fs::path(dir) / "model.ckpt").string());
}

std::vector<StepMetrics> read_metrics_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("read_metrics_file: cannot open " + path);
    std::vector<StepMetrics> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        StepMetrics m;
        m.step = j.at("step").get<int>();
        m.l_task = j.at("l_task").get<double>();
        m.l_inter = j.at("l_inter").get<double>();
        m.l_total = j.at("l_total").get<double>();
        m.lr = j.at("lr").get<double>();
        m.wall_ms = j.at("wall_ms").get<double>();
        out.push_back(m);
    }
    return out;
}

TrainRun train_teacher(const TeacherTrainConfig& cfg, const Corpus& corpus,
                       const std::string& run_dir) {
    cfg.validate();
    check_corpus_fits(corpus, cfg.model);
    ModelCheckpoint model = ModelCheckpoint::init(cfg.model, subseed(cfg.seed, "teacher-init"));
    model.set_requires_grad(true);
    AdamW optim(ordered_params(model), cfg.optim);
    Rng sampler(subseed(cfg.seed, "batch-sampler"));

    TrainRun run;
    run.config_snapshot = {{"kind", "train-teacher"},
                           {"steps", cfg.steps},
                           {"batch_size", cfg.batch_size},
                           {"mask", to_string(cfg.mask_mode)},
                           {"seed", cfg.seed},
                           {"lr_initial", cfg.optim.lr_initial},
                           {"lr_final", cfg.optim.lr_final},
                           {"weight_decay", cfg.optim.weight_decay},
                           {"model",
                            {{"n_layers", cfg.model.n_layers},
                             {"d_model", cfg.model.d_model},
                             {"n_heads", cfg.model.n_heads},
                             {"vocab_size", cfg.model.vocab_size},
                             {"max_seq_len", cfg.model.max_seq_len},
                             {"tie_unembedding", cfg.model.tie_unembedding}}}};
    run.metrics.reserve(cfg.steps);

    for (int step = 0; step < cfg.steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto examples = sample_batch(corpus.train, cfg.batch_size, sampler);
        const PackedBatch batch = pack_examples(examples, cfg.mask_mode, cfg.model.max_seq_len);
        ForwardTrace trace = forward_with_states(model, batch.inputs);
        Tensor loss = cross_entropy(trace.logits, batch.targets, batch.weights);
        const double l = loss.item();
        if (!std::isfinite(l))
            throw NumericError("train_teacher: NaN loss at step " + std::to_string(step));
        optim.zero_grad();
        loss.backward();
        const double lr = cosine_lr(cfg.optim, step, cfg.steps);
        optim.step(lr);
        const double wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        run.metrics.push_back({step, l, 0.0, l, lr, wall_ms});
    }
    model.set_requires_grad(false);
    run.final_model = std::move(model);
    if (!run_dir.empty()) {
        write_run_dir(run_dir, run.config_snapshot, run.metrics, run.final_model);
        run.checkpoint_path = (fs::path(run_dir) / "model.ckpt").string();
    }
    return run;
}

TrainRun distill(const DistillConfig& cfg, const ModelCheckpoint& teacher, const Corpus& corpus,
                 const std::string& run_dir) {
    cfg.validate();
    teacher.config.validate();
    if (teacher.config.vocab_size != cfg.student.vocab_size)
        throw ConfigError("distill: teacher and student must share vocab_size");
    if (teacher.config.n_layers < cfg.student.n_layers)
        throw ConfigError("distill: teacher must be at least as deep as the student");
    check_corpus_fits(corpus, cfg.student);

    ModelCheckpoint student =
        cfg.student_init.empty()
            ? ModelCheckpoint::init(cfg.student, subseed(cfg.seed, "student-init"))
            : load_checkpoint(cfg.student_init);
    if (!cfg.student_init.empty() && !(student.config == cfg.student))
        throw ConfigError("distill: student_init checkpoint does not match student config");
    student.set_requires_grad(true);

    LayerMapping mapping;
    if (cfg.k_layers > 0)
        mapping = uniform_map(select_student_layers(cfg.student.n_layers, cfg.k_layers),
                              cfg.student.n_layers, teacher.config.n_layers);
    const bool use_inter = cfg.lambda != 0.0 && !mapping.empty();

    AdamW optim(ordered_params(student), cfg.optim);
    Rng sampler(subseed(cfg.seed, "batch-sampler"));

    TrainRun run;
    run.config_snapshot = {{"kind", "distill"},
                           {"teacher_ckpt", cfg.teacher_ckpt},
                           {"task_loss", to_string(cfg.task_loss)},
                           {"inter_loss", to_string(cfg.inter_loss)},
                           {"lambda", cfg.lambda},
                           {"k_layers", cfg.k_layers},
                           {"mapping", mapping.to_string()},
                           {"steps", cfg.steps},
                           {"batch_size", cfg.batch_size},
                           {"mask", to_string(cfg.mask_mode)},
                           {"seed", cfg.seed},
                           {"lr_initial", cfg.optim.lr_initial},
                           {"lr_final", cfg.optim.lr_final},
                           {"weight_decay", cfg.optim.weight_decay},
                           {"lens_final_norm", cfg.lens.apply_final_norm},
                           {"lens_temperature", cfg.lens.temperature},
                           {"student",
                            {{"n_layers", cfg.student.n_layers},
                             {"d_model", cfg.student.d_model},
                             {"n_heads", cfg.student.n_heads},
                             {"vocab_size", cfg.student.vocab_size},
                             {"max_seq_len", cfg.student.max_seq_len},
                             {"tie_unembedding", cfg.student.tie_unembedding}}}};
    run.metrics.reserve(cfg.steps);

    for (int step = 0; step < cfg.steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto examples = sample_batch(corpus.train, cfg.batch_size, sampler);
        const PackedBatch batch = pack_examples(examples, cfg.mask_mode, cfg.student.max_seq_len);
        Tensor row_weights =
            Tensor::from_data({static_cast<int64_t>(batch.weights.size())}, batch.weights);

        // Teacher runs without gradient tracking (frozen).
        ForwardTrace teacher_trace;
        {
            NoGradGuard no_grad;
            teacher_trace = forward_with_states(teacher, batch.inputs);
        }

        ForwardTrace student_trace = forward_with_states(student, batch.inputs);
        Tensor task =
            task_loss_tensor(cfg.task_loss, student_trace, teacher_trace, batch, row_weights);
        Tensor total = task;
        double l_inter = 0.0;
        if (use_inter) {
            Tensor inter = intermediate_loss(teacher_trace, student_trace, mapping,
                                             cfg.inter_loss, cfg.lens, teacher, student,
                                             row_weights);
            l_inter = inter.item();
            total = add(task, scale(inter, cfg.lambda));
        }
        const double l_task = task.item();
        const double l_total = total.item();
        if (!std::isfinite(l_total))
            throw NumericError("distill: NaN loss at step " + std::to_string(step) +
                               " (l_task=" + std::to_string(l_task) +
                               ", l_inter=" + std::to_string(l_inter) + ")");
        optim.zero_grad();
        total.backward();
        const double lr = cosine_lr(cfg.optim, step, cfg.steps);
        optim.step(lr);
        const double wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        run.metrics.push_back({step, l_task, l_inter, l_total, lr, wall_ms});
    }
    student.set_requires_grad(false);
    run.final_model = std::move(student);
    if (!run_dir.empty()) {
        write_run_dir(run_dir, run.config_snapshot, run.metrics, run.final_model);
        run.checkpoint_path = (fs::path(run_dir) / "model.ckpt").string();
    }
    return run;
}

double heldout_ce(const ModelCheckpoint& ckpt, const std::vector<Example>& examples,
                  MaskMode mask_mode, int batch_size) {
    if (examples.empty()) throw std::invalid_argument("heldout_ce: empty example set");
    NoGradGuard no_grad;
    double weighted_nll = 0.0, weight_total = 0.0;
    for (size_t start = 0; start < examples.size(); start += batch_size) {
        std::vector<const Example*> chunk;
        for (size_t i = start; i < std::min(examples.size(), start + batch_size); ++i)
            chunk.push_back(&examples[i]);
        const PackedBatch batch = pack_examples(chunk, mask_mode, ckpt.config.max_seq_len);
        ForwardTrace trace = forward_with_states(ckpt, batch.inputs);
        double w = 0.0;
        for (double x : batch.weights) w += x;
        const Tensor ce = cross_entropy(trace.logits, batch.targets, batch.weights);
        weighted_nll += ce.item() * w;
        weight_total += w;
    }
    return weighted_nll / weight_total;
}

}  // namespace dlens
