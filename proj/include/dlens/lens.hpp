#pragma once

#include <vector>

#include "dlens/model.hpp"
#include "dlens/tensor.hpp"

namespace dlens {

struct LensConfig {
    // false = literal softmax(W_U h); true re-uses the model's final norm
    // before projecting (the final layer then reproduces the model output).
    bool apply_final_norm = false;
    double temperature = 1.0;  // 1.0 in all replication paths

    void validate() const;
};

// Project a hidden state [.., d] through W_U [V, d] into vocabulary
// distributions [.., V]. gain/bias are the final-norm parameters; required
// when apply_final_norm is set.
Tensor logit_lens(const Tensor& h, const Tensor& w_u, const LensConfig& cfg,
                  const Tensor* norm_gain = nullptr, const Tensor* norm_bias = nullptr);

// Lens over the requested layers of a trace (layer ids are 1-based block
// indices). Order of the input ids is preserved.
std::vector<Tensor> lens_all_layers(const ForwardTrace& trace, const ModelCheckpoint& ckpt,
                                    const std::vector<int>& layer_ids, const LensConfig& cfg);

}  // namespace dlens
