#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stlf/calendar.hpp"
#include "stlf/tensor.hpp"

namespace stlf {

enum class Activation { kSilu, kLeakyRelu };

Activation activation_from_name(const std::string& name);
const char* activation_name(Activation a);

Tensor activate(const Context& ctx, Activation act, const Tensor& x, double leaky_alpha = 0.01);

// Named references to every learnable tensor of a layer/model, used by the
// optimizer and the checkpoint writer. Collection order is fixed.
using ParamRefs = std::vector<std::pair<std::string, Param*>>;

// ---------------------------------------------------------------------------
// Linear layer acting along the time axis. In the default channel-shared
// mode one (out x in) weight and one (out) bias serve every channel row.
// With channels > 1 each channel row gets its own weight/bias slice; the
// bank is stored as a (channels*out x in) weight and a (channels x out)
// bias.
// ---------------------------------------------------------------------------
struct LinearLayer {
    Param weight;
    Param bias;
    int in = 0;
    int out = 0;
    int channels = 1;  // 1 = shared across channels
};

// Weights and biases drawn uniform(-1/sqrt(in), 1/sqrt(in)), row-major.
LinearLayer make_linear(int in, int out, Rng& rng, int channels = 1);

// y = x.W^T + b applied per row; accepts (rows x in) or a rank-1 (in)
// vector (returned as rank-1 (out)). In banked mode rows must equal
// `channels`.
Tensor linear_forward(const Context& ctx, const LinearLayer& layer, const Tensor& x);

void collect_params(LinearLayer& layer, const std::string& prefix, ParamRefs& refs);

// ---------------------------------------------------------------------------
// Res-L block: direct linear skip plus a two-layer nonlinear path,
//   out = l1(x) + dropout(l3(g(l2(x)))).
// Dropout sits after l3 only.
// ---------------------------------------------------------------------------
struct ResLBlock {
    LinearLayer l1;  // in -> out skip path
    LinearLayer l2;  // in -> out
    LinearLayer l3;  // out -> out
    Activation activation = Activation::kSilu;
    double leaky_alpha = 0.01;
    double dropout_p = 0.0;
};

ResLBlock make_res_l(int in, int out, Activation act, double dropout_p, Rng& rng,
                     int channels = 1);
Tensor res_l_forward(const Context& ctx, const ResLBlock& block, const Tensor& x);
void collect_params(ResLBlock& block, const std::string& prefix, ParamRefs& refs);

// ---------------------------------------------------------------------------
// Sinusoidal positional encoding, (T x C) constant:
//   PE[p][2i]   = sin(p / 10000^(2i/C))
//   PE[p][2i+1] = cos(p / 10000^(2i/C))
// For odd C the final column is the unpaired sin term.
// ---------------------------------------------------------------------------
Tensor positional_encoding(int T, int C);

// ---------------------------------------------------------------------------
// Date-time embedding: each calendar component maps through its own
// (cardinality x d_emb) table; per step the component vectors are
// concatenated in `order` and reduced to one scalar, giving an (L x 1)
// feature column.
// ---------------------------------------------------------------------------
struct DateTimeEmbedding {
    struct Table {
        Component component;
        int cardinality = 0;
        Param weights;  // cardinality x d_emb, init normal(0, 0.02)
    };
    std::vector<Table> tables;        // storage, any order
    std::vector<Component> order;     // declared concatenation order
    LinearLayer reducer;              // (d_emb * #components) -> 1
    int d_emb = 8;

    const Table& table_for(Component c) const;
};

DateTimeEmbedding make_datetime_embedding(const std::vector<Component>& components, Rng& rng,
                                          int d_emb = 8, int minute_bins = 4);
Tensor datetime_features(const Context& ctx, const DateTimeEmbedding& embed,
                         const CalendarStamps& stamps);
void collect_params(DateTimeEmbedding& embed, const std::string& prefix, ParamRefs& refs);

// (x - min(x)) / (max(x) - min(x)); all zeros when max == min so constant
// features stay silent instead of dividing by zero.
Tensor minmax_normalize(const Context& ctx, const Tensor& x);

// ---------------------------------------------------------------------------
// Dynamic encoder/decoder: Res-L wrapped with a learnable scalar gate m
// blending normalized date-time features into the input,
//   out = res_l(inner, x + m * normalize(datetime_features(stamps))^T).
// The DateTimeEmbedding is shared (owned by the model), not a parameter of
// this struct.
// ---------------------------------------------------------------------------
struct DynamicCoder {
    Param gate_m;  // scalar, initialized to 1
    ResLBlock inner;
    const DateTimeEmbedding* dt_embed = nullptr;
};

DynamicCoder make_dynamic_coder(int in, int out, Activation act, double dropout_p,
                                const DateTimeEmbedding* dt_embed, Rng& rng, int channels = 1);
Tensor dynamic_coder_forward(const Context& ctx, const DynamicCoder& coder, const Tensor& x,
                             const CalendarStamps& stamps);
void collect_params(DynamicCoder& coder, const std::string& prefix, ParamRefs& refs);

// ---------------------------------------------------------------------------
// Parameter-free spatial attention over a (C x tau) preliminary prediction:
//   S = tanh(x); I = S.S^T; W = softmax(I); out = x + W^T.x
// Softmax normalizes row-wise by default (each W row is a distribution over
// source channels); column-wise is configurable.
// ---------------------------------------------------------------------------
enum class AttnNorm { kRowwise, kColwise };

struct SpatialAttention {
    AttnNorm norm = AttnNorm::kRowwise;
};

Tensor spatial_attention_forward(const Context& ctx, const Tensor& x_prel,
                                 AttnNorm norm = AttnNorm::kRowwise);

}  // namespace stlf
