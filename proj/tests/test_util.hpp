#pragma once

#include "stlf/tensor.hpp"

namespace testutil {

// Temporarily substitutes a parameter's value with `v`. When `v` is watched
// on the context's tape, the parameter resolves to that same tape node, so
// gradient checks against parameters see the analytic gradient of `v`.
class ScopedParamOverride {
 public:
    ScopedParamOverride(stlf::Param* param, const stlf::Context& ctx, const stlf::Tensor& v)
        : param_(param),
          saved_value_(param->value),
          saved_tape_(param->tape_id),
          saved_node_(param->node) {
        param_->value = v.detached();
        if (ctx.tape && v.node() >= 0) {
            param_->tape_id = ctx.tape->id();
            param_->node = v.node();
        } else {
            param_->tape_id = 0;
            param_->node = -1;
        }
    }

    ~ScopedParamOverride() {
        param_->value = saved_value_;
        param_->tape_id = saved_tape_;
        param_->node = saved_node_;
    }

    ScopedParamOverride(const ScopedParamOverride&) = delete;
    ScopedParamOverride& operator=(const ScopedParamOverride&) = delete;

 private:
    stlf::Param* param_;
    stlf::Tensor saved_value_;
    std::uint64_t saved_tape_;
    int saved_node_;
};

}  // namespace testutil
