#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dlens/tensor.hpp"

namespace dlens {

// Reserved token ids shared by the tokenizer and the models.
inline constexpr int32_t kPadId = 0;
inline constexpr int32_t kBosId = 1;
inline constexpr int32_t kEosId = 2;

struct ModelConfig {
    int n_layers = 0;
    int d_model = 0;
    int n_heads = 0;
    int vocab_size = 0;
    int max_seq_len = 0;
    bool tie_unembedding = false;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Named-parameter container. Parameter names and shapes are a pure function
// of the config (checked against the file manifest on load).
struct ModelCheckpoint {
    ModelConfig config;
    std::map<std::string, Tensor> params;
    int format_version = 1;

    // Fresh initialization: weight matrices ~ N(0, 0.02), biases zero,
    // layernorm gains one.
    static ModelCheckpoint init(const ModelConfig& config, uint64_t seed);

    // Canonical parameter order (also the checkpoint manifest order).
    static std::vector<std::string> param_names(const ModelConfig& config);
    static Shape param_shape(const ModelConfig& config, const std::string& name);

    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;
    const Tensor& unembedding() const;  // W_U [V, d] (wte when tied)
    void set_requires_grad(bool value);
    int64_t n_params() const;
};

// Token ids in a row-major [batch, seq] block (PAD-filled tails allowed).
struct TokenBatch {
    std::vector<int32_t> ids;
    int64_t batch = 0;
    int64_t seq = 0;
};

// All intermediate states of one forward pass. hidden_states[0] is the
// embedding output; hidden_states[l] is the residual stream after block l.
struct ForwardTrace {
    Tensor logits;                      // [B, T, V]
    std::vector<Tensor> hidden_states;  // n_layers + 1 entries, each [B, T, d]
};

ForwardTrace forward_with_states(const ModelCheckpoint& ckpt, const TokenBatch& tokens);

struct GenerateOptions {
    int max_new = 32;
    double temperature = 1.0;
    double top_p = 1.0;
    bool greedy = false;  // temperature -> 0 limit path
    uint64_t seed = 0;
    int32_t eos_id = kEosId;
};

std::vector<int32_t> generate(const ModelCheckpoint& ckpt, std::span<const int32_t> prompt,
                              const GenerateOptions& opts);

// Bit-exact file format: magic "DLENSCKP", u32 little-endian header length,
// UTF-8 JSON header (config + ordered tensor manifest), then a contiguous
// little-endian fp32 payload.
void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path);
ModelCheckpoint load_checkpoint(const std::string& path);

}  // namespace dlens
