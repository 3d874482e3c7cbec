#include "dlens/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "dlens/errors.hpp"
#include "dlens/rng.hpp"

namespace dlens {

namespace {

constexpr char kMagic[8] = {'D', 'L', 'E', 'N', 'S', 'C', 'K', 'P'};
constexpr double kInitStd = 0.02;

std::string block_prefix(int i) { return "blocks." + std::to_string(i) + "."; }

}  // namespace

void ModelConfig::validate() const {
    if (n_layers < 1 || d_model < 1 || n_heads < 1 || vocab_size < 1 || max_seq_len < 1)
        throw ConfigError("ModelConfig: all extents must be >= 1");
    if (d_model % n_heads != 0)
        throw ConfigError("ModelConfig: d_model must be divisible by n_heads");
}

std::vector<std::string> ModelCheckpoint::param_names(const ModelConfig& config) {
    std::vector<std::string> names = {"wte", "wpe"};
    for (int i = 0; i < config.n_layers; ++i) {
        const std::string p = block_prefix(i);
        for (const char* s : {"ln1.gain", "ln1.bias", "attn.wq", "attn.bq", "attn.wk",
                              "attn.bk", "attn.wv", "attn.bv", "attn.wo", "attn.bo",
                              "ln2.gain", "ln2.bias", "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2"})
            names.push_back(p + s);
    }
    names.push_back("final_norm.gain");
    names.push_back("final_norm.bias");
    if (!config.tie_unembedding) names.push_back("unembed");
    return names;
}

Shape ModelCheckpoint::param_shape(const ModelConfig& config, const std::string& name) {
    const int64_t d = config.d_model, v = config.vocab_size;
    if (name == "wte" || name == "unembed") return {v, d};
    if (name == "wpe") return {config.max_seq_len, d};
    if (name == "final_norm.gain" || name == "final_norm.bias") return {d};
    const auto dot = name.rfind('.');
    const std::string leaf = name.substr(name.find('.', 7) + 1);  // after "blocks.N."
    (void)dot;
    if (leaf == "ln1.gain" || leaf == "ln1.bias" || leaf == "ln2.gain" || leaf == "ln2.bias" ||
        leaf == "attn.bq" || leaf == "attn.bk" || leaf == "attn.bv" || leaf == "attn.bo" ||
        leaf == "mlp.b2")
        return {d};
    if (leaf == "attn.wq" || leaf == "attn.wk" || leaf == "attn.wv" || leaf == "attn.wo")
        return {d, d};  // [out, in]
    if (leaf == "mlp.w1") return {4 * d, d};
    if (leaf == "mlp.b1") return {4 * d};
    if (leaf == "mlp.w2") return {d, 4 * d};
    throw std::invalid_argument("param_shape: unknown parameter " + name);
}

ModelCheckpoint ModelCheckpoint::init(const ModelConfig& config, uint64_t seed) {
    config.validate();
    ModelCheckpoint ckpt;
    ckpt.config = config;
    Rng rng(seed);
    for (const std::string& name : param_names(config)) {
        const Shape shape = param_shape(config, name);
        int64_t n = 1;
        for (int64_t e : shape) n *= e;
        std::vector<double> data(n, 0.0);
        const bool is_gain = name.ends_with("gain");
        const bool is_matrix = shape.size() == 2;
        if (is_matrix) {
            for (auto& x : data) x = rng.normal() * kInitStd;
        } else if (is_gain) {
            std::fill(data.begin(), data.end(), 1.0);
        }
        ckpt.params.emplace(name, Tensor::from_data(shape, std::move(data)));
    }
    return ckpt;
}

Tensor& ModelCheckpoint::param(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
}

const Tensor& ModelCheckpoint::param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
}

const Tensor& ModelCheckpoint::unembedding() const {
    return config.tie_unembedding ? param("wte") : param("unembed");
}

void ModelCheckpoint::set_requires_grad(bool value) {
    for (auto& [name, tensor] : params) tensor.set_requires_grad(value);
}

int64_t ModelCheckpoint::n_params() const {
    int64_t n = 0;
    for (const auto& [name, tensor] : params) n += tensor.numel();
    return n;
}

// ---------------------------------------------------------------------------
// Forward pass

ForwardTrace forward_with_states(const ModelCheckpoint& ckpt, const TokenBatch& tokens) {
    const ModelConfig& cfg = ckpt.config;
    const int64_t b = tokens.batch, t = tokens.seq;
    if (b < 1 || t < 1 || static_cast<int64_t>(tokens.ids.size()) != b * t)
        throw std::invalid_argument("forward: malformed token batch");
    if (t > cfg.max_seq_len)
        throw std::invalid_argument("forward: sequence longer than max_seq_len");
    for (int32_t id : tokens.ids)
        if (id < 0 || id >= cfg.vocab_size)
            throw std::invalid_argument("forward: token id out of range");

    std::vector<int32_t> pos_ids(b * t);
    for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < t; ++j) pos_ids[i * t + j] = static_cast<int32_t>(j);

    const double att_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model / cfg.n_heads));

    ForwardTrace trace;
    trace.hidden_states.reserve(cfg.n_layers + 1);

    Tensor x = add(embedding_lookup(ckpt.param("wte"), tokens.ids, {b, t}),
                   embedding_lookup(ckpt.param("wpe"), pos_ids, {b, t}));
    trace.hidden_states.push_back(x);

    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string p = block_prefix(l);
        // attention sublayer
        Tensor xn = layernorm(x, ckpt.param(p + "ln1.gain"), ckpt.param(p + "ln1.bias"));
        Tensor q = linear(xn, ckpt.param(p + "attn.wq"), ckpt.param(p + "attn.bq"));
        Tensor k = linear(xn, ckpt.param(p + "attn.wk"), ckpt.param(p + "attn.bk"));
        Tensor v = linear(xn, ckpt.param(p + "attn.wv"), ckpt.param(p + "attn.bv"));
        Tensor qh = split_heads(q, cfg.n_heads);
        Tensor kh = split_heads(k, cfg.n_heads);
        Tensor vh = split_heads(v, cfg.n_heads);
        Tensor att = causal_softmax(scale(bmm_nt(qh, kh), att_scale));
        Tensor ctx = merge_heads(bmm(att, vh), cfg.n_heads);
        Tensor att_out = linear(ctx, ckpt.param(p + "attn.wo"), ckpt.param(p + "attn.bo"));
        x = add(x, att_out);
        // mlp sublayer
        Tensor yn = layernorm(x, ckpt.param(p + "ln2.gain"), ckpt.param(p + "ln2.bias"));
        Tensor h = gelu(linear(yn, ckpt.param(p + "mlp.w1"), ckpt.param(p + "mlp.b1")));
        Tensor mlp_out = linear(h, ckpt.param(p + "mlp.w2"), ckpt.param(p + "mlp.b2"));
        x = add(x, mlp_out);
        trace.hidden_states.push_back(x);
    }

    Tensor xf = layernorm(x, ckpt.param("final_norm.gain"), ckpt.param("final_norm.bias"));
    trace.logits = matmul_nt(xf, ckpt.unembedding());
    return trace;
}

// ---------------------------------------------------------------------------
// Sampling

namespace {

// Full-vocabulary sample after temperature and top-p truncation. The kept set
// is the smallest prefix of the probability-sorted vocabulary reaching top_p
// (ties broken by token id for determinism).
int32_t sample_token(std::span<const double> probs, double top_p, Rng& rng) {
    const size_t v = probs.size();
    if (top_p >= 1.0) return rng.categorical(probs);
    std::vector<int32_t> order(v);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
        if (probs[a] != probs[b]) return probs[a] > probs[b];
        return a < b;
    });
    std::vector<double> kept;
    std::vector<int32_t> kept_ids;
    double acc = 0.0;
    for (int32_t id : order) {
        kept.push_back(probs[id]);
        kept_ids.push_back(id);
        acc += probs[id];
        if (acc >= top_p) break;
    }
    return kept_ids[rng.categorical(kept)];
}

}  // namespace

std::vector<int32_t> generate(const ModelCheckpoint& ckpt, std::span<const int32_t> prompt,
                              const GenerateOptions& opts) {
    if (prompt.empty()) throw std::invalid_argument("generate: empty prompt");
    if (!(opts.temperature > 0.0)) throw std::invalid_argument("generate: temperature must be > 0");
    if (!(opts.top_p > 0.0 && opts.top_p <= 1.0))
        throw std::invalid_argument("generate: top_p must be in (0, 1]");
    NoGradGuard no_grad;
    Rng rng(opts.seed);
    std::vector<int32_t> context(prompt.begin(), prompt.end());
    std::vector<int32_t> out;
    const int64_t v = ckpt.config.vocab_size;
    for (int step = 0; step < opts.max_new; ++step) {
        if (static_cast<int>(context.size()) > ckpt.config.max_seq_len) break;
        TokenBatch batch{context, 1, static_cast<int64_t>(context.size())};
        ForwardTrace trace = forward_with_states(ckpt, batch);
        std::span<const double> logits =
            trace.logits.data().subspan((context.size() - 1) * v, v);
        int32_t next;
        if (opts.greedy) {
            next = 0;
            for (int64_t j = 1; j < v; ++j)
                if (logits[j] > logits[next]) next = static_cast<int32_t>(j);
        } else {
            Tensor scaled = scale(Tensor::from_data({v}, {logits.begin(), logits.end()}),
                                  1.0 / opts.temperature);
            Tensor probs = softmax(scaled);
            next = sample_token(probs.data(), opts.top_p, rng);
        }
        if (next == opts.eos_id) break;
        out.push_back(next);
        context.push_back(next);
        if (static_cast<int>(context.size()) > ckpt.config.max_seq_len) break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint IO

void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path) {
    ckpt.config.validate();
    const auto names = ModelCheckpoint::param_names(ckpt.config);
    nlohmann::json manifest = nlohmann::json::array();
    int64_t offset = 0;
    for (const auto& name : names) {
        const Tensor& t = ckpt.param(name);
        manifest.push_back({{"name", name},
                            {"dtype", "f32"},
                            {"shape", t.shape()},
                            {"offset", offset}});
        offset += t.numel() * static_cast<int64_t>(sizeof(float));
    }
    nlohmann::json header = {
        {"format_version", ckpt.format_version},
        {"config",
         {{"n_layers", ckpt.config.n_layers},
          {"d_model", ckpt.config.d_model},
          {"n_heads", ckpt.config.n_heads},
          {"vocab_size", ckpt.config.vocab_size},
          {"max_seq_len", ckpt.config.max_seq_len},
          {"tie_unembedding", ckpt.config.tie_unembedding}}},
        {"tensors", manifest}};
    const std::string header_str = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("save_checkpoint: cannot open " + path);
    f.write(kMagic, 8);
    const uint32_t header_len = static_cast<uint32_t>(header_str.size());
    unsigned char len_bytes[4] = {static_cast<unsigned char>(header_len & 0xff),
                                  static_cast<unsigned char>((header_len >> 8) & 0xff),
                                  static_cast<unsigned char>((header_len >> 16) & 0xff),
                                  static_cast<unsigned char>((header_len >> 24) & 0xff)};
    f.write(reinterpret_cast<const char*>(len_bytes), 4);
    f.write(header_str.data(), header_str.size());
    std::vector<float> buffer;
    for (const auto& name : names) {
        const Tensor& t = ckpt.param(name);
        buffer.resize(t.numel());
        const auto data = t.data();
        for (int64_t i = 0; i < t.numel(); ++i) buffer[i] = static_cast<float>(data[i]);
        f.write(reinterpret_cast<const char*>(buffer.data()), buffer.size() * sizeof(float));
    }
    if (!f) throw IoError("save_checkpoint: write failed for " + path);
}

ModelCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("load_checkpoint: bad magic in " + path);
    unsigned char len_bytes[4];
    f.read(reinterpret_cast<char*>(len_bytes), 4);
    if (!f) throw IoError("load_checkpoint: truncated header length");
    const uint32_t header_len = static_cast<uint32_t>(len_bytes[0]) |
                                (static_cast<uint32_t>(len_bytes[1]) << 8) |
                                (static_cast<uint32_t>(len_bytes[2]) << 16) |
                                (static_cast<uint32_t>(len_bytes[3]) << 24);
    std::string header_str(header_len, '\0');
    f.read(header_str.data(), header_len);
    if (!f) throw IoError("load_checkpoint: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("load_checkpoint: corrupt header: ") + e.what());
    }

    ModelCheckpoint ckpt;
    try {
        const auto& c = header.at("config");
        ckpt.config.n_layers = c.at("n_layers").get<int>();
        ckpt.config.d_model = c.at("d_model").get<int>();
        ckpt.config.n_heads = c.at("n_heads").get<int>();
        ckpt.config.vocab_size = c.at("vocab_size").get<int>();
        ckpt.config.max_seq_len = c.at("max_seq_len").get<int>();
        ckpt.config.tie_unembedding = c.at("tie_unembedding").get<bool>();
        ckpt.format_version = header.at("format_version").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("load_checkpoint: corrupt header: ") + e.what());
    }
    if (ckpt.format_version != 1)
        throw IoError("load_checkpoint: unsupported format_version");
    ckpt.config.validate();

    // Manifest check: names, order, shapes, dtype, offsets all pinned by config.
    const auto names = ModelCheckpoint::param_names(ckpt.config);
    const auto& tensors = header.at("tensors");
    if (tensors.size() != names.size())
        throw IoError("load_checkpoint: manifest error: tensor count mismatch");
    int64_t offset = 0;
    for (size_t i = 0; i < names.size(); ++i) {
        const auto& entry = tensors.at(i);
        const Shape expected = ModelCheckpoint::param_shape(ckpt.config, names[i]);
        if (entry.at("name").get<std::string>() != names[i] ||
            entry.at("dtype").get<std::string>() != "f32" ||
            entry.at("shape").get<Shape>() != expected ||
            entry.at("offset").get<int64_t>() != offset)
            throw IoError("load_checkpoint: manifest error for tensor " + names[i]);
        int64_t n = 1;
        for (int64_t e : expected) n *= e;
        offset += n * static_cast<int64_t>(sizeof(float));
    }

    for (const auto& name : names) {
        const Shape shape = ModelCheckpoint::param_shape(ckpt.config, name);
        int64_t n = 1;
        for (int64_t e : shape) n *= e;
        std::vector<float> buffer(n);
        f.read(reinterpret_cast<char*>(buffer.data()), n * sizeof(float));
        if (!f) throw IoError("load_checkpoint: truncated payload at tensor " + name);
        std::vector<double> data(n);
        for (int64_t i = 0; i < n; ++i) data[i] = static_cast<double>(buffer[i]);
        ckpt.params.emplace(name, Tensor::from_data(shape, std::move(data)));
    }
    // Trailing garbage means the file does not match its manifest.
    f.peek();
    if (!f.eof()) throw IoError("load_checkpoint: payload longer than manifest");
    return ckpt;
}

}  // namespace dlens
