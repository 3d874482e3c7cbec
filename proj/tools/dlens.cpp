// dlens command-line entry point. Subcommands wire the library into
// reproducible runs; every command draws all randomness from a single --seed
// fanned out per component (see --help footers), and refuses to overwrite an
// existing --out unless --force is given.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "dlens/distill.hpp"
#include "dlens/divergence.hpp"
#include "dlens/errors.hpp"
#include "dlens/eval_metrics.hpp"
#include "dlens/model.hpp"
#include "dlens/rng.hpp"
#include "dlens/runconfig.hpp"
#include "dlens/synth_data.hpp"
#include "dlens/tensor.hpp"

namespace fs = std::filesystem;
using namespace dlens;

namespace {

constexpr const char* kSeedNote =
    "All randomness derives from --seed via subseed(seed, component-name): "
    "components are 'automaton-tables', 'corpus-sampling', 'teacher-init', "
    "'student-init', 'batch-sampler', 'regret-prefix', 'oracle-prefix', 'eval'.";

std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void prepare_out_dir(const std::string& out, bool force) {
    if (out.empty()) throw ConfigError("--out is required");
    if (fs::exists(out)) {
        if (!force)
            throw ConfigError("output path '" + out + "' already exists (use --force)");
        fs::remove_all(out);
    }
    fs::create_directories(out);
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw ConfigError("cannot parse integer list element: " + item);
        }
    }
    if (out.empty()) throw ConfigError("empty integer list");
    return out;
}

// Applies config-file values to options the user did not set on the command
// line (flags win over the file).
class FileConfig {
  public:
    FileConfig(CLI::App* cmd, const std::string& path, std::vector<std::string> known_keys)
        : cmd_(cmd) {
        if (!path.empty()) json_ = load_config_file(path, known_keys);
    }

    template <class T>
    void apply(const std::string& key, const std::string& flag, T& value) {
        if (!json_.contains(key)) return;
        if (cmd_->count(flag) > 0) return;  // flag wins
        try {
            value = json_.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config: bad value for key '" + key + "': " + e.what());
        }
    }

  private:
    CLI::App* cmd_;
    nlohmann::json json_ = nlohmann::json::object();
};

ModelCheckpoint load_required(const std::string& path, const char* what) {
    if (path.empty()) throw ConfigError(std::string("missing required checkpoint: ") + what);
    return load_checkpoint(path);
}

std::vector<Example> limited(const std::vector<Example>& xs, int limit) {
    if (limit <= 0 || limit >= static_cast<int>(xs.size())) return xs;
    return {xs.begin(), xs.begin() + limit};
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
    CorpusSpec spec;
    std::string spec_file;
    std::string out;
    bool force = false;
};

void run_gen_data(const GenDataArgs& args) {
    args.spec.validate();
    prepare_out_dir(args.out, args.force);
    Corpus corpus = generate_corpus(args.spec);
    save_corpus(corpus, args.out);
    const double ce = automaton_heldout_ce(args.spec, corpus.test);
    int64_t train_tokens = 0;
    for (const Example& ex : corpus.train)
        train_tokens += static_cast<int64_t>(ex.prompt_ids.size() + ex.response_ids.size());
    std::cout << "corpus written to " << args.out << "\n"
              << "  train/val/test: " << corpus.train.size() << "/" << corpus.val.size() << "/"
              << corpus.test.size() << " sequences\n"
              << "  train tokens: " << train_tokens << "\n"
              << "  automaton held-out CE: " << fmt(ce) << " nats (uniform "
              << fmt(std::log(static_cast<double>(args.spec.vocab_size))) << ")\n";
}

// ---------------------------------------------------------------------------
// train-teacher / distill

struct TrainTeacherArgs {
    TeacherTrainConfig cfg;
    std::string config_file;
    std::string data;
    std::string out;
    std::string mask = "response";
    bool force = false;
};

void run_train_teacher(TrainTeacherArgs& args) {
    args.cfg.mask_mode = mask_mode_from_string(args.mask);
    prepare_out_dir(args.out, args.force);
    Corpus corpus = load_corpus(args.data);
    TrainRun run = train_teacher(args.cfg, corpus, args.out);
    const double val_ce = heldout_ce(run.final_model, corpus.val, args.cfg.mask_mode);
    std::cout << "teacher run written to " << args.out << "\n"
              << "  final train CE: " << fmt(run.metrics.back().l_task) << "\n"
              << "  val CE: " << fmt(val_ce) << "\n"
              << "  checkpoint: " << run.checkpoint_path << "\n";
}

struct DistillArgs {
    DistillConfig cfg;
    std::string config_file;
    std::string data;
    std::string out;
    std::string task_loss = "rkl";
    std::string inter_loss = "jsd";
    std::string mask = "response";
    bool force = false;
};

void run_distill(DistillArgs& args) {
    args.cfg.task_loss = task_loss_from_string(args.task_loss);
    args.cfg.inter_loss = divergence_kind_from_string(args.inter_loss);
    args.cfg.mask_mode = mask_mode_from_string(args.mask);
    prepare_out_dir(args.out, args.force);
    Corpus corpus = load_corpus(args.data);
    ModelCheckpoint teacher = load_required(args.cfg.teacher_ckpt, "--teacher");
    TrainRun run = distill(args.cfg, teacher, corpus, args.out);
    const double val_ce = heldout_ce(run.final_model, corpus.val, args.cfg.mask_mode);
    std::cout << "distill run written to " << args.out << "\n"
              << "  final l_task: " << fmt(run.metrics.back().l_task)
              << "  l_inter: " << fmt(run.metrics.back().l_inter)
              << "  l_total: " << fmt(run.metrics.back().l_total) << "\n"
              << "  val CE: " << fmt(val_ce) << "\n"
              << "  checkpoint: " << run.checkpoint_path << "\n";
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string teacher, student, data, out;
    std::string split = "test";
    std::string seeds = "10,20,30,40,50";
    std::string reference = "corpus";  // corpus | teacher-greedy
    std::string mask = "response";
    int max_new = 24;
    int limit = 0;
    bool force = false;
};

void run_eval(const EvalArgs& args) {
    prepare_out_dir(args.out, args.force);
    Corpus corpus = load_corpus(args.data);
    const auto examples = limited(corpus.split(args.split), args.limit);
    if (examples.empty()) throw ConfigError("eval: split '" + args.split + "' is empty");
    ModelCheckpoint teacher = load_required(args.teacher, "--teacher");
    ModelCheckpoint student = load_required(args.student, "--student");
    const auto seeds = parse_int_list(args.seeds);
    const MaskMode mask_mode = mask_mode_from_string(args.mask);

    std::ofstream jsonl(fs::path(args.out) / "eval.jsonl", std::ios::trunc);
    if (!jsonl) throw IoError("eval: cannot write eval.jsonl");

    struct Agg {
        double p = 0, r = 0, f = 0;
        int n = 0;
    };
    std::map<std::string, Agg> aggregates;  // key: "greedy" or "seed<k>"

    for (size_t ei = 0; ei < examples.size(); ++ei) {
        const Example& ex = examples[ei];
        std::vector<int32_t> prompt = {kBosId};
        prompt.insert(prompt.end(), ex.prompt_ids.begin(), ex.prompt_ids.end());
        std::vector<int32_t> reference = ex.response_ids;
        if (args.reference == "teacher-greedy") {
            GenerateOptions opts{.max_new = args.max_new, .greedy = true, .seed = 0};
            reference = generate(teacher, prompt, opts);
        } else if (args.reference != "corpus") {
            throw ConfigError("eval: --reference must be corpus|teacher-greedy");
        }

        auto record = [&](const std::string& mode, int seed,
                          const std::vector<int32_t>& candidate) {
            const RougeLScore s = rouge_l(candidate, reference);
            nlohmann::json line = {{"example", ei},
                                   {"mode", mode},
                                   {"seed", seed},
                                   {"rouge_p", s.precision},
                                   {"rouge_r", s.recall},
                                   {"rouge_f", s.f_measure},
                                   {"candidate_len", candidate.size()},
                                   {"reference_len", reference.size()}};
            jsonl << line.dump() << "\n";
            Agg& agg = aggregates[mode == "greedy" ? "greedy" : "seed" + std::to_string(seed)];
            agg.p += s.precision;
            agg.r += s.recall;
            agg.f += s.f_measure;
            agg.n += 1;
        };

        GenerateOptions greedy{.max_new = args.max_new, .greedy = true, .seed = 0};
        record("greedy", -1, generate(student, prompt, greedy));
        for (int seed : seeds) {
            GenerateOptions opts{.max_new = args.max_new,
                                 .temperature = 1.0,
                                 .top_p = 1.0,
                                 .greedy = false,
                                 .seed = subseed(static_cast<uint64_t>(seed), "eval", ei)};
            record("sampled", seed, generate(student, prompt, opts));
        }
    }

    const double student_ce = heldout_ce(student, examples, mask_mode);
    const double teacher_ce = heldout_ce(teacher, examples, mask_mode);

    std::ofstream csv(fs::path(args.out) / "rouge.csv", std::ios::trunc);
    if (!csv) throw IoError("eval: cannot write rouge.csv");
    csv << "mode,seed,rouge_p_x100,rouge_r_x100,rouge_f_x100,n_examples\n";
    auto emit = [&](const std::string& mode, const std::string& seed, const Agg& a) {
        csv << mode << "," << seed << "," << fmt(100.0 * a.p / a.n) << ","
            << fmt(100.0 * a.r / a.n) << "," << fmt(100.0 * a.f / a.n) << "," << a.n << "\n";
    };
    emit("greedy", "-", aggregates.at("greedy"));
    Agg mean;
    for (int seed : seeds) {
        const Agg& a = aggregates.at("seed" + std::to_string(seed));
        emit("sampled", std::to_string(seed), a);
        mean.p += a.p;
        mean.r += a.r;
        mean.f += a.f;
        mean.n += a.n;
    }
    emit("sampled_mean", "-", mean);

    nlohmann::json report = {{"n_examples", examples.size()},
                             {"split", args.split},
                             {"reference", args.reference},
                             {"student_heldout_ce", student_ce},
                             {"teacher_heldout_ce", teacher_ce},
                             {"greedy_rouge_f_x100",
                              100.0 * aggregates.at("greedy").f / aggregates.at("greedy").n},
                             {"sampled_mean_rouge_f_x100", 100.0 * mean.f / mean.n}};
    std::ofstream rep(fs::path(args.out) / "report.json", std::ios::trunc);
    rep << report.dump(2) << "\n";
    std::cout << "eval written to " << args.out << "\n"
              << "  greedy Rouge-L (x100): "
              << fmt(100.0 * aggregates.at("greedy").f / aggregates.at("greedy").n) << "\n"
              << "  sampled mean Rouge-L (x100): " << fmt(100.0 * mean.f / mean.n) << "\n"
              << "  student held-out CE: " << fmt(student_ce) << " (teacher "
              << fmt(teacher_ce) << ")\n";
}

// ---------------------------------------------------------------------------
// lens-profile

struct ProfileArgs {
    std::string teacher, student, data, out;
    std::string split = "test";
    std::string mapping = "auto";
    std::string kind = "fkl";
    std::string mask = "response";
    int k_layers = 2;
    int limit = 0;
    bool lens_final_norm = false;
    double lens_temperature = 1.0;
    bool force = false;
};

void run_profile(const ProfileArgs& args) {
    prepare_out_dir(args.out, args.force);
    Corpus corpus = load_corpus(args.data);
    const auto examples = limited(corpus.split(args.split), args.limit);
    ModelCheckpoint teacher = load_required(args.teacher, "--teacher");
    ModelCheckpoint student = load_required(args.student, "--student");
    LayerMapping mapping =
        args.mapping == "auto"
            ? uniform_map(select_student_layers(student.config.n_layers, args.k_layers),
                          student.config.n_layers, teacher.config.n_layers)
            : LayerMapping::parse(args.mapping);
    LensConfig lens_cfg;
    lens_cfg.apply_final_norm = args.lens_final_norm;
    lens_cfg.temperature = args.lens_temperature;
    const DivergenceKind kind = divergence_kind_from_string(args.kind);
    auto profile = layer_kl_profile(teacher, student, examples, mapping, kind, lens_cfg,
                                    mask_mode_from_string(args.mask));

    std::ofstream csv(fs::path(args.out) / "profile.csv", std::ios::trunc);
    std::ofstream jsonl(fs::path(args.out) / "profile.jsonl", std::ios::trunc);
    if (!csv || !jsonl) throw IoError("lens-profile: cannot write outputs");
    csv << "student_layer,teacher_layer,kind,mean_divergence,is_final\n";
    for (const auto& rec : profile.records) {
        csv << rec.student_layer << "," << rec.teacher_layer << "," << to_string(kind) << ","
            << fmt(rec.mean_divergence) << "," << (rec.is_final ? 1 : 0) << "\n";
        nlohmann::json line = {{"student_layer", rec.student_layer},
                               {"teacher_layer", rec.teacher_layer},
                               {"kind", to_string(kind)},
                               {"mean_divergence", rec.mean_divergence},
                               {"is_final", rec.is_final}};
        jsonl << line.dump() << "\n";
    }
    std::cout << "profile written to " << args.out << "\n"
              << "  mean intermediate " << to_string(kind) << ": "
              << fmt(profile.mean_intermediate()) << "\n"
              << "  final-layer " << to_string(kind) << ": " << fmt(profile.final_divergence())
              << "\n";
}

// ---------------------------------------------------------------------------
// landscape

struct LandscapeArgs {
    std::string kind = "both";
    double cmin = 1e-8;
    double cmax = 1e8;
    int points = 33;
    std::string out;
    bool force = false;
};

void run_landscape(const LandscapeArgs& args) {
    if (!(args.cmin > 0.0) || !(args.cmin < args.cmax))
        throw ConfigError("landscape: need 0 < cmin < cmax");
    if (args.points < 2) throw ConfigError("landscape: need at least 2 points");
    if (args.kind != "jsd" && args.kind != "jd" && args.kind != "both")
        throw ConfigError("landscape: --kind must be jsd|jd|both");
    prepare_out_dir(args.out, args.force);
    std::ofstream csv(fs::path(args.out) / "landscape.csv", std::ios::trunc);
    if (!csv) throw IoError("landscape: cannot write landscape.csv");
    csv << "c";
    if (args.kind != "jd") csv << ",g_jsd";
    if (args.kind != "jsd") csv << ",g_jd";
    csv << "\n";
    const double lo = std::log10(args.cmin), hi = std::log10(args.cmax);
    for (int i = 0; i < args.points; ++i) {
        const double c = std::pow(10.0, lo + i * (hi - lo) / (args.points - 1));
        csv << fmt(c);
        if (args.kind != "jd") csv << "," << fmt(jsd_perclass_g(c));
        if (args.kind != "jsd") csv << "," << fmt(jd_perclass_g(c));
        csv << "\n";
    }
    std::cout << "landscape written to " << args.out << " (" << args.points << " points)\n";
}

// ---------------------------------------------------------------------------
// exposure

struct ExposureArgs {
    std::string teacher, student, data, out;
    std::string split = "test";
    std::string horizons = "8,16,24";
    int samples = 16;
    int n_prompts = 8;
    uint64_t seed = 0;
    bool force = false;
};

void run_exposure(const ExposureArgs& args) {
    prepare_out_dir(args.out, args.force);
    Corpus corpus = load_corpus(args.data);
    ModelCheckpoint teacher = load_required(args.teacher, "--teacher");
    ModelCheckpoint student = load_required(args.student, "--student");
    const auto horizons = parse_int_list(args.horizons);
    const int max_h = *std::max_element(horizons.begin(), horizons.end());
    const int max_prompt =
        std::min(teacher.config.max_seq_len, student.config.max_seq_len) - max_h;
    if (max_prompt < 2) throw ConfigError("exposure: horizons exceed model capacity");

    std::vector<std::vector<int32_t>> prompts;
    for (const Example& ex : corpus.split(args.split)) {
        if (static_cast<int>(prompts.size()) >= args.n_prompts) break;
        if (static_cast<int>(ex.prompt_ids.size()) + 1 > max_prompt) continue;
        std::vector<int32_t> p = {kBosId};
        p.insert(p.end(), ex.prompt_ids.begin(), ex.prompt_ids.end());
        prompts.push_back(std::move(p));
    }
    if (prompts.empty()) throw ConfigError("exposure: no usable prompts in split");

    auto reports = exaccerr(teacher, student, prompts, horizons, args.samples, args.seed);

    std::ofstream csv(fs::path(args.out) / "exposure.csv", std::ios::trunc);
    std::ofstream jsonl(fs::path(args.out) / "exposure.jsonl", std::ios::trunc);
    if (!csv || !jsonl) throw IoError("exposure: cannot write outputs");
    csv << "horizon,regret,regret_se,oracle_rate,oracle_rate_se,exaccerr_pct,exaccerr_se,"
           "n_prompts,n_samples\n";
    for (const auto& r : reports) {
        if (std::isinf(r.exaccerr_pct))
            std::cerr << "warning: horizon " << r.horizon
                      << ": oracle rate below guard with nonzero regret; ExAccErr is inf\n";
        csv << r.horizon << "," << fmt(r.regret) << "," << fmt(r.regret_se) << ","
            << fmt(r.oracle_rate) << "," << fmt(r.oracle_rate_se) << "," << fmt(r.exaccerr_pct)
            << "," << fmt(r.exaccerr_se) << "," << prompts.size() << "," << args.samples << "\n";
        nlohmann::json line = {{"horizon", r.horizon},
                               {"regret", r.regret},
                               {"regret_se", r.regret_se},
                               {"oracle_rate", r.oracle_rate},
                               {"oracle_rate_se", r.oracle_rate_se},
                               {"exaccerr_pct", std::isinf(r.exaccerr_pct)
                                                    ? nlohmann::json("inf")
                                                    : nlohmann::json(r.exaccerr_pct)},
                               {"exaccerr_se", r.exaccerr_se},
                               {"n_prompts", prompts.size()},
                               {"n_samples", args.samples}};
        jsonl << line.dump() << "\n";
    }
    std::cout << "exposure written to " << args.out << "\n";
    for (const auto& r : reports)
        std::cout << "  l=" << r.horizon << ": ExAccErr " << fmt(r.exaccerr_pct) << "% (+/- "
                  << fmt(r.exaccerr_se) << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
    init_threads_from_env();
    CLI::App app{"dlens: desk-scale knowledge-distillation laboratory"};
    app.name("dlens");
    app.require_subcommand(1);
    app.footer(std::string(kSeedNote) +
               "\nExit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O error."
               "\nDLENS_THREADS bounds worker threads (default: logical cores).");

    // ---- gen-data
    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic corpus");
    gen_cmd->add_option("--out", gen.out, "Output corpus directory")->required();
    gen_cmd->add_option("--seed", gen.spec.seed, "Master seed (default 1234)");
    gen_cmd->add_option("--vocab-size", gen.spec.vocab_size,
                        "Vocabulary size incl. specials (default 64)");
    gen_cmd->add_option("--states", gen.spec.n_hidden_states,
                        "Automaton hidden states (default 8)");
    gen_cmd->add_option("--temperature", gen.spec.transition_temperature,
                        "Table softmax temperature (default 0.5)");
    gen_cmd->add_option("--min-len", gen.spec.min_len, "Minimum sequence length (default 12)");
    gen_cmd->add_option("--max-len", gen.spec.max_len, "Maximum sequence length (default 24)");
    gen_cmd->add_option("--n-train", gen.spec.n_train, "Training sequences (default 2048)");
    gen_cmd->add_option("--n-val", gen.spec.n_val, "Validation sequences (default 256)");
    gen_cmd->add_option("--n-test", gen.spec.n_test, "Test sequences (default 256)");
    gen_cmd->add_option("--spec", gen.spec_file, "JSON spec file (flags win over file values)");
    gen_cmd->add_flag("--force", gen.force, "Overwrite an existing --out");
    gen_cmd->footer("Outputs: train.jsonl/val.jsonl/test.jsonl (lines of "
                    "{\"prompt\":[ids],\"response\":[ids]}) and manifest.json (spec echo).");
    gen_cmd->callback([&]() {
        FileConfig file(gen_cmd, gen.spec_file,
                        {"seed", "vocab_size", "n_hidden_states", "transition_temperature",
                         "min_len", "max_len", "n_train", "n_val", "n_test"});
        file.apply("seed", "--seed", gen.spec.seed);
        file.apply("vocab_size", "--vocab-size", gen.spec.vocab_size);
        file.apply("n_hidden_states", "--states", gen.spec.n_hidden_states);
        file.apply("transition_temperature", "--temperature", gen.spec.transition_temperature);
        file.apply("min_len", "--min-len", gen.spec.min_len);
        file.apply("max_len", "--max-len", gen.spec.max_len);
        file.apply("n_train", "--n-train", gen.spec.n_train);
        file.apply("n_val", "--n-val", gen.spec.n_val);
        file.apply("n_test", "--n-test", gen.spec.n_test);
        run_gen_data(gen);
    });

    // ---- train-teacher
    TrainTeacherArgs teach;
    auto* teach_cmd = app.add_subcommand("train-teacher", "Train the teacher by cross entropy");
    teach_cmd->add_option("--data", teach.data, "Corpus directory")->required();
    teach_cmd->add_option("--out", teach.out, "Run directory")->required();
    teach_cmd->add_option("--config", teach.config_file, "JSON config file (flags win)");
    teach_cmd->add_option("--seed", teach.cfg.seed, "Master seed (default 0)");
    teach_cmd->add_option("--steps", teach.cfg.steps, "Training steps (default 2000)");
    teach_cmd->add_option("--batch-size", teach.cfg.batch_size, "Batch size (default 32)");
    teach_cmd->add_option("--lr-initial", teach.cfg.optim.lr_initial,
                          "Initial LR (default 3e-3)");
    teach_cmd->add_option("--lr-final", teach.cfg.optim.lr_final, "Final LR (default 1e-7)");
    teach_cmd->add_option("--weight-decay", teach.cfg.optim.weight_decay,
                          "Decoupled weight decay (default 0.01)");
    teach_cmd->add_option("--n-layers", teach.cfg.model.n_layers, "Teacher layers (default 6)");
    teach_cmd->add_option("--d-model", teach.cfg.model.d_model, "Teacher width (default 64)");
    teach_cmd->add_option("--n-heads", teach.cfg.model.n_heads, "Attention heads (default 4)");
    teach_cmd->add_option("--max-seq-len", teach.cfg.model.max_seq_len,
                          "Maximum sequence length (default 48)");
    teach_cmd->add_option("--mask", teach.mask, "Loss mask: response|all (default response)");
    teach_cmd->add_flag("--force", teach.force, "Overwrite an existing --out");
    teach_cmd->footer("Run directory: config.json (snapshot), metrics.jsonl (one object per "
                      "step: step,l_task,l_inter,l_total,lr,wall_ms), model.ckpt.");
    teach_cmd->callback([&]() {
        FileConfig file(teach_cmd, teach.config_file,
                        {"seed", "steps", "batch_size", "lr_initial", "lr_final",
                         "weight_decay", "n_layers", "d_model", "n_heads", "max_seq_len",
                         "mask"});
        file.apply("seed", "--seed", teach.cfg.seed);
        file.apply("steps", "--steps", teach.cfg.steps);
        file.apply("batch_size", "--batch-size", teach.cfg.batch_size);
        file.apply("lr_initial", "--lr-initial", teach.cfg.optim.lr_initial);
        file.apply("lr_final", "--lr-final", teach.cfg.optim.lr_final);
        file.apply("weight_decay", "--weight-decay", teach.cfg.optim.weight_decay);
        file.apply("n_layers", "--n-layers", teach.cfg.model.n_layers);
        file.apply("d_model", "--d-model", teach.cfg.model.d_model);
        file.apply("n_heads", "--n-heads", teach.cfg.model.n_heads);
        file.apply("max_seq_len", "--max-seq-len", teach.cfg.model.max_seq_len);
        file.apply("mask", "--mask", teach.mask);
        run_train_teacher(teach);
    });

    // ---- distill
    DistillArgs dist;
    auto* dist_cmd = app.add_subcommand("distill", "Distill a student from a frozen teacher");
    dist_cmd->add_option("--data", dist.data, "Corpus directory")->required();
    dist_cmd->add_option("--teacher", dist.cfg.teacher_ckpt, "Teacher checkpoint")->required();
    dist_cmd->add_option("--out", dist.out, "Run directory")->required();
    dist_cmd->add_option("--config", dist.config_file, "JSON config file (flags win)");
    dist_cmd->add_option("--seed", dist.cfg.seed, "Master seed (default 0)");
    dist_cmd->add_option("--steps", dist.cfg.steps, "Training steps (default 2000)");
    dist_cmd->add_option("--batch-size", dist.cfg.batch_size, "Batch size (default 32)");
    dist_cmd->add_option("--lambda", dist.cfg.lambda,
                         "Intermediate-loss scaling factor (default 1.0)");
    dist_cmd->add_option("--k-layers", dist.cfg.k_layers,
                         "Mapped intermediate layers K; 0 disables (default 2)");
    dist_cmd->add_option("--task-loss", dist.task_loss,
                         "sft|fkl|rkl|jsd|jeffreys (default rkl)");
    dist_cmd->add_option("--inter-loss", dist.inter_loss,
                         "fkl|rkl|jsd|jeffreys (default jsd)");
    dist_cmd->add_option("--lr-initial", dist.cfg.optim.lr_initial, "Initial LR (default 3e-3)");
    dist_cmd->add_option("--lr-final", dist.cfg.optim.lr_final, "Final LR (default 1e-7)");
    dist_cmd->add_option("--weight-decay", dist.cfg.optim.weight_decay,
                         "Decoupled weight decay (default 0.01)");
    dist_cmd->add_option("--student-n-layers", dist.cfg.student.n_layers,
                         "Student layers (default 3)");
    dist_cmd->add_option("--student-d-model", dist.cfg.student.d_model,
                         "Student width (default 32)");
    dist_cmd->add_option("--student-n-heads", dist.cfg.student.n_heads,
                         "Student heads (default 2)");
    dist_cmd->add_option("--student-max-seq-len", dist.cfg.student.max_seq_len,
                         "Student max sequence length (default 48)");
    dist_cmd->add_option("--student-init", dist.cfg.student_init,
                         "Optional student checkpoint to start from");
    dist_cmd->add_option("--mask", dist.mask, "Loss mask: response|all (default response)");
    dist_cmd->add_flag("--lens-final-norm", dist.cfg.lens.apply_final_norm,
                       "Apply the final norm inside the lens (default off)");
    dist_cmd->add_option("--lens-temperature", dist.cfg.lens.temperature,
                         "Lens temperature (default 1.0)");
    dist_cmd->add_flag("--force", dist.force, "Overwrite an existing --out");
    dist_cmd->footer("Run directory: config.json (snapshot), metrics.jsonl (one object per "
                     "step: step,l_task,l_inter,l_total,lr,wall_ms), model.ckpt.\n"
                     "L_total = L_task + lambda * L_inter holds at every step.");
    dist_cmd->callback([&]() {
        FileConfig file(dist_cmd, dist.config_file,
                        {"seed", "steps", "batch_size", "lambda", "k_layers", "task_loss",
                         "inter_loss", "lr_initial", "lr_final", "weight_decay",
                         "student_n_layers", "student_d_model", "student_n_heads",
                         "student_max_seq_len", "student_init", "mask", "lens_final_norm",
                         "lens_temperature"});
        file.apply("seed", "--seed", dist.cfg.seed);
        file.apply("steps", "--steps", dist.cfg.steps);
        file.apply("batch_size", "--batch-size", dist.cfg.batch_size);
        file.apply("lambda", "--lambda", dist.cfg.lambda);
        file.apply("k_layers", "--k-layers", dist.cfg.k_layers);
        file.apply("task_loss", "--task-loss", dist.task_loss);
        file.apply("inter_loss", "--inter-loss", dist.inter_loss);
        file.apply("lr_initial", "--lr-initial", dist.cfg.optim.lr_initial);
        file.apply("lr_final", "--lr-final", dist.cfg.optim.lr_final);
        file.apply("weight_decay", "--weight-decay", dist.cfg.optim.weight_decay);
        file.apply("student_n_layers", "--student-n-layers", dist.cfg.student.n_layers);
        file.apply("student_d_model", "--student-d-model", dist.cfg.student.d_model);
        file.apply("student_n_heads", "--student-n-heads", dist.cfg.student.n_heads);
        file.apply("student_max_seq_len", "--student-max-seq-len",
                   dist.cfg.student.max_seq_len);
        file.apply("student_init", "--student-init", dist.cfg.student_init);
        file.apply("mask", "--mask", dist.mask);
        file.apply("lens_final_norm", "--lens-final-norm", dist.cfg.lens.apply_final_norm);
        file.apply("lens_temperature", "--lens-temperature", dist.cfg.lens.temperature);
        run_distill(dist);
    });

    // ---- eval
    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "Rouge-L and held-out CE evaluation");
    eval_cmd->add_option("--teacher", eval.teacher, "Teacher checkpoint")->required();
    eval_cmd->add_option("--student", eval.student, "Student checkpoint")->required();
    eval_cmd->add_option("--data", eval.data, "Corpus directory")->required();
    eval_cmd->add_option("--out", eval.out, "Output directory")->required();
    eval_cmd->add_option("--split", eval.split, "Corpus split (default test)");
    eval_cmd->add_option("--seeds", eval.seeds, "Sampling seeds (default 10,20,30,40,50)");
    eval_cmd->add_option("--max-new", eval.max_new, "Generation budget (default 24)");
    eval_cmd->add_option("--limit", eval.limit, "Evaluate at most N examples (0 = all)");
    eval_cmd->add_option("--reference", eval.reference,
                         "Reference source: corpus|teacher-greedy (default corpus)");
    eval_cmd->add_option("--mask", eval.mask, "CE mask: response|all (default response)");
    eval_cmd->add_flag("--force", eval.force, "Overwrite an existing --out");
    eval_cmd->footer(
        "Outputs: eval.jsonl (per example/mode/seed: example,mode,seed,rouge_p,rouge_r,"
        "rouge_f,candidate_len,reference_len), rouge.csv (columns mode,seed,rouge_p_x100,"
        "rouge_r_x100,rouge_f_x100,n_examples; rows greedy, one per seed, sampled_mean), "
        "report.json (held-out CE and Rouge-L aggregates).");
    eval_cmd->callback([&]() { run_eval(eval); });

    // ---- lens-profile
    ProfileArgs prof;
    auto* prof_cmd =
        app.add_subcommand("lens-profile", "Layer-wise divergence profile through the lens");
    prof_cmd->add_option("--teacher", prof.teacher, "Teacher checkpoint")->required();
    prof_cmd->add_option("--student", prof.student, "Student checkpoint")->required();
    prof_cmd->add_option("--data", prof.data, "Corpus directory")->required();
    prof_cmd->add_option("--out", prof.out, "Output directory")->required();
    prof_cmd->add_option("--split", prof.split, "Corpus split (default test)");
    prof_cmd->add_option("--mapping", prof.mapping,
                         "auto or explicit pairs like 1:2,2:4 (default auto)");
    prof_cmd->add_option("--k-layers", prof.k_layers,
                         "Mapped layers for --mapping auto (default 2)");
    prof_cmd->add_option("--kind", prof.kind, "fkl|rkl|jsd|jeffreys (default fkl)");
    prof_cmd->add_option("--limit", prof.limit, "Profile at most N examples (0 = all)");
    prof_cmd->add_option("--mask", prof.mask, "Token mask: response|all (default response)");
    prof_cmd->add_flag("--lens-final-norm", prof.lens_final_norm,
                       "Apply the final norm inside the lens (default off)");
    prof_cmd->add_option("--lens-temperature", prof.lens_temperature,
                         "Lens temperature (default 1.0)");
    prof_cmd->add_flag("--force", prof.force, "Overwrite an existing --out");
    prof_cmd->footer("Outputs: profile.csv / profile.jsonl (columns student_layer,"
                     "teacher_layer,kind,mean_divergence,is_final; one row per mapped pair "
                     "plus the final layer).");
    prof_cmd->callback([&]() { run_profile(prof); });

    // ---- landscape
    LandscapeArgs land;
    auto* land_cmd =
        app.add_subcommand("landscape", "Per-class loss landscapes g(c) on a log grid");
    land_cmd->add_option("--kind", land.kind, "jsd|jd|both (default both)");
    land_cmd->add_option("--cmin", land.cmin, "Grid lower bound (default 1e-8)");
    land_cmd->add_option("--cmax", land.cmax, "Grid upper bound (default 1e8)");
    land_cmd->add_option("--points", land.points, "Grid points (default 33)");
    land_cmd->add_option("--out", land.out, "Output directory")->required();
    land_cmd->add_flag("--force", land.force, "Overwrite an existing --out");
    land_cmd->footer("Outputs: landscape.csv (columns c,g_jsd,g_jd on a log-spaced grid; "
                     "g_jsd(c) = c ln c - (1+c) ln((1+c)/2), g_jd(c) = (c-1) ln c).");
    land_cmd->callback([&]() { run_landscape(land); });

    // ---- exposure
    ExposureArgs expo;
    auto* expo_cmd = app.add_subcommand("exposure", "ExAccErr exposure-bias measurement");
    expo_cmd->add_option("--teacher", expo.teacher, "Teacher checkpoint")->required();
    expo_cmd->add_option("--student", expo.student, "Student checkpoint")->required();
    expo_cmd->add_option("--data", expo.data, "Corpus directory")->required();
    expo_cmd->add_option("--out", expo.out, "Output directory")->required();
    expo_cmd->add_option("--split", expo.split, "Prompt split (default test)");
    expo_cmd->add_option("--horizons", expo.horizons, "Horizon list (default 8,16,24)");
    expo_cmd->add_option("--samples", expo.samples, "Prefix samples per prompt (default 16)");
    expo_cmd->add_option("--n-prompts", expo.n_prompts, "Prompts to use (default 8)");
    expo_cmd->add_option("--seed", expo.seed, "Master seed (default 0)");
    expo_cmd->add_flag("--force", expo.force, "Overwrite an existing --out");
    expo_cmd->footer(
        "Outputs: exposure.csv / exposure.jsonl (columns horizon,regret,regret_se,"
        "oracle_rate,oracle_rate_se,exaccerr_pct,exaccerr_se,n_prompts,n_samples). "
        "ExAccErr(l) = (R(l) - l*eps(l)) / (l*eps(l)) * 100%.");
    expo_cmd->callback([&]() { run_exposure(expo); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
