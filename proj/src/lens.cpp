#include "dlens/lens.hpp"

#include <stdexcept>

#include "dlens/errors.hpp"

namespace dlens {

void LensConfig::validate() const {
    if (!(temperature > 0.0)) throw ConfigError("LensConfig: temperature must be > 0");
}

Tensor logit_lens(const Tensor& h, const Tensor& w_u, const LensConfig& cfg,
                  const Tensor* norm_gain, const Tensor* norm_bias) {
    cfg.validate();
    if (w_u.rank() != 2 || h.dim(-1) != w_u.dim(1))
        throw std::invalid_argument("logit_lens: hidden width does not match W_U");
    Tensor state = h;
    if (cfg.apply_final_norm) {
        if (norm_gain == nullptr || norm_bias == nullptr)
            throw std::invalid_argument("logit_lens: final-norm parameters required");
        state = layernorm(state, *norm_gain, *norm_bias);
    }
    Tensor logits = matmul_nt(state, w_u);
    if (cfg.temperature != 1.0) logits = scale(logits, 1.0 / cfg.temperature);
    return softmax(logits, -1);
}

std::vector<Tensor> lens_all_layers(const ForwardTrace& trace, const ModelCheckpoint& ckpt,
                                    const std::vector<int>& layer_ids, const LensConfig& cfg) {
    const int n_layers = ckpt.config.n_layers;
    std::vector<Tensor> out;
    out.reserve(layer_ids.size());
    const Tensor& gain = ckpt.param("final_norm.gain");
    const Tensor& bias = ckpt.param("final_norm.bias");
    for (int l : layer_ids) {
        if (l < 1 || l > n_layers)
            throw std::invalid_argument("lens_all_layers: layer id out of range");
        out.push_back(logit_lens(trace.hidden_states[l], ckpt.unembedding(), cfg, &gain, &bias));
    }
    return out;
}

}  // namespace dlens
