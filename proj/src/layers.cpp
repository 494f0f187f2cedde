#include "stlf/layers.hpp"

#include <cmath>

namespace stlf {

const char* component_name(Component c) {
    switch (c) {
        case Component::kMonth: return "month";
        case Component::kDate: return "date";
        case Component::kWeekday: return "weekday";
        case Component::kHour: return "hour";
        default: return "minute";
    }
}

int default_cardinality(Component c) {
    switch (c) {
        case Component::kMonth: return 12;
        case Component::kDate: return 31;
        case Component::kWeekday: return 7;
        case Component::kHour: return 24;
        default: return 4;  // 15-minute bins
    }
}

Component component_from_name(const std::string& name) {
    if (name == "month") return Component::kMonth;
    if (name == "date" || name == "day") return Component::kDate;
    if (name == "weekday") return Component::kWeekday;
    if (name == "hour") return Component::kHour;
    if (name == "minute") return Component::kMinute;
    throw ConfigError("unknown calendar component '" + name + "'");
}

Activation activation_from_name(const std::string& name) {
    if (name == "silu" || name == "SiLU") return Activation::kSilu;
    if (name == "leaky_relu" || name == "LeakyReLU") return Activation::kLeakyRelu;
    throw ConfigError("unknown activation '" + name + "' (expected silu or leaky_relu)");
}

const char* activation_name(Activation a) {
    return a == Activation::kSilu ? "silu" : "leaky_relu";
}

Tensor activate(const Context& ctx, Activation act, const Tensor& x, double leaky_alpha) {
    return act == Activation::kSilu ? silu(ctx, x) : leaky_relu(ctx, x, leaky_alpha);
}

// ---------------------------------------------------------------------------
// LinearLayer
// ---------------------------------------------------------------------------

namespace {

Tensor uniform_tensor(Rng& rng, Shape shape, double lo, double hi) {
    std::vector<double> v(shape.size());
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from_vector(std::move(v), shape);
}

Tensor normal_tensor(Rng& rng, Shape shape, double mean, double stddev) {
    std::vector<double> v(shape.size());
    for (auto& x : v) x = rng.normal(mean, stddev);
    return Tensor::from_vector(std::move(v), shape);
}

}  // namespace

LinearLayer make_linear(int in, int out, Rng& rng, int channels) {
    if (in < 1 || out < 1 || channels < 1) {
        throw ConfigError("linear layer dims must be positive");
    }
    LinearLayer layer;
    layer.in = in;
    layer.out = out;
    layer.channels = channels;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    layer.weight = Param(uniform_tensor(rng, Shape(channels * out, in), -bound, bound));
    layer.bias = channels == 1
                     ? Param(uniform_tensor(rng, Shape(out), -bound, bound))
                     : Param(uniform_tensor(rng, Shape(channels, out), -bound, bound));
    return layer;
}

Tensor linear_forward(const Context& ctx, const LinearLayer& layer, const Tensor& x) {
    const bool vector_in = x.rank() == 1;
    Tensor xin = x;
    if (vector_in) {
        xin = Tensor::matrix_view(
            std::make_shared<const std::vector<double>>(x.to_vector()), 0, 1,
            static_cast<int>(x.size()));
        xin = xin.with_node(x.node());
    }
    if (xin.rank() != 2 || xin.cols() != layer.in) {
        throw DimensionError("linear_forward: input " + x.shape().str() + " incompatible with " +
                             std::to_string(layer.in) + "->" + std::to_string(layer.out) +
                             " layer");
    }
    Tensor out;
    if (layer.channels == 1) {
        out = affine(ctx, xin, ctx.use(layer.weight), ctx.use(layer.bias));
    } else {
        if (xin.rows() != layer.channels) {
            throw DimensionError("linear_forward: banked layer expects " +
                                 std::to_string(layer.channels) + " rows, got " +
                                 xin.shape().str());
        }
        Tensor w = ctx.use(layer.weight);
        Tensor b = ctx.use(layer.bias);
        std::vector<Tensor> rows;
        rows.reserve(layer.channels);
        for (int c = 0; c < layer.channels; ++c) {
            Tensor xc = slice_rows(ctx, xin, c, c + 1);
            Tensor wc = slice_rows(ctx, w, c * layer.out, (c + 1) * layer.out);
            Tensor bc = slice_rows(ctx, b, c, c + 1);
            rows.push_back(add(ctx, matmul(ctx, xc, transpose(ctx, wc)), bc));
        }
        out = concat_rows(ctx, rows);
    }
    if (vector_in) {
        // Collapse the single row back to rank 1, preserving the graph link.
        Tensor flat = Tensor::from_vector(out.to_vector(), Shape(layer.out));
        if (ctx.recording() && out.requires_grad()) {
            const int on = out.node();
            const std::size_t n = out.size();
            auto fn = [on, n](const double* g, Tape& t) {
                double* dst = t.grad_accum(on, n);
                for (std::size_t i = 0; i < n; ++i) dst[i] += g[i];
            };
            const int id = ctx.tape->record(Shape(layer.out), {on}, std::move(fn));
            flat = flat.with_node(id);
        }
        return flat;
    }
    return out;
}

void collect_params(LinearLayer& layer, const std::string& prefix, ParamRefs& refs) {
    refs.emplace_back(prefix + ".weight", &layer.weight);
    refs.emplace_back(prefix + ".bias", &layer.bias);
}

// ---------------------------------------------------------------------------
// ResLBlock
// ---------------------------------------------------------------------------

ResLBlock make_res_l(int in, int out, Activation act, double dropout_p, Rng& rng, int channels) {
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
        throw ConfigError("res-l dropout must lie in [0,1)");
    }
    ResLBlock block;
    block.l1 = make_linear(in, out, rng, channels);
    block.l2 = make_linear(in, out, rng, channels);
    block.l3 = make_linear(out, out, rng, channels);
    block.activation = act;
    block.dropout_p = dropout_p;
    return block;
}

Tensor res_l_forward(const Context& ctx, const ResLBlock& block, const Tensor& x) {
    Tensor skip = linear_forward(ctx, block.l1, x);
    Tensor hidden = activate(ctx, block.activation, linear_forward(ctx, block.l2, x),
                             block.leaky_alpha);
    Tensor refined = dropout(ctx, linear_forward(ctx, block.l3, hidden), block.dropout_p);
    return add(ctx, skip, refined);
}

void collect_params(ResLBlock& block, const std::string& prefix, ParamRefs& refs) {
    collect_params(block.l1, prefix + ".l1", refs);
    collect_params(block.l2, prefix + ".l2", refs);
    collect_params(block.l3, prefix + ".l3", refs);
}

// ---------------------------------------------------------------------------
// Positional encoding
// ---------------------------------------------------------------------------

Tensor positional_encoding(int T, int C) {
    if (T < 1 || C < 1) throw ConfigError("positional_encoding requires T, C >= 1");
    std::vector<double> pe(static_cast<std::size_t>(T) * C);
    for (int p = 0; p < T; ++p) {
        for (int j = 0; j < C; ++j) {
            const int pair = j - (j % 2);  // column of the sin partner, 2i
            const double freq = std::pow(10000.0, -static_cast<double>(pair) / C);
            const double arg = p * freq;
            pe[static_cast<std::size_t>(p) * C + j] = (j % 2 == 0) ? std::sin(arg) : std::cos(arg);
        }
    }
    return Tensor::from_vector(std::move(pe), Shape(T, C));
}

// ---------------------------------------------------------------------------
// DateTimeEmbedding
// ---------------------------------------------------------------------------

const DateTimeEmbedding::Table& DateTimeEmbedding::table_for(Component c) const {
    for (const Table& t : tables) {
        if (t.component == c) return t;
    }
    throw ConfigError(std::string("no embedding table for component '") + component_name(c) +
                      "'");
}

DateTimeEmbedding make_datetime_embedding(const std::vector<Component>& components, Rng& rng,
                                          int d_emb, int minute_bins) {
    if (components.empty()) throw ConfigError("date-time embedding needs at least one component");
    DateTimeEmbedding embed;
    embed.d_emb = d_emb;
    embed.order = components;
    for (Component c : components) {
        const int card = c == Component::kMinute ? minute_bins : default_cardinality(c);
        DateTimeEmbedding::Table table;
        table.component = c;
        table.cardinality = card;
        table.weights = Param(normal_tensor(rng, Shape(card, d_emb), 0.0, 0.02));
        embed.tables.push_back(std::move(table));
    }
    embed.reducer = make_linear(d_emb * static_cast<int>(components.size()), 1, rng);
    return embed;
}

Tensor datetime_features(const Context& ctx, const DateTimeEmbedding& embed,
                         const CalendarStamps& stamps) {
    if (stamps.empty()) throw DataError("datetime_features: no stamps");
    const std::size_t L = stamps.size();
    std::vector<Tensor> pieces;
    pieces.reserve(embed.order.size());
    for (Component c : embed.order) {
        const DateTimeEmbedding::Table& table = embed.table_for(c);
        std::vector<int> indices(L);
        for (std::size_t s = 0; s < L; ++s) {
            const int code = stamps.code(s, c);
            if (code < 0 || code >= table.cardinality) {
                throw DataError(std::string("stamp component '") + component_name(c) +
                                "' code " + std::to_string(code) + " outside cardinality " +
                                std::to_string(table.cardinality));
            }
            indices[s] = code;
        }
        pieces.push_back(embed_rows(ctx, ctx.use(table.weights), indices));
    }
    Tensor joined = pieces.size() == 1 ? pieces[0] : concat_cols(ctx, pieces);
    return linear_forward(ctx, embed.reducer, joined);  // L x 1
}

void collect_params(DateTimeEmbedding& embed, const std::string& prefix, ParamRefs& refs) {
    for (auto& table : embed.tables) {
        refs.emplace_back(prefix + ".table_" + component_name(table.component), &table.weights);
    }
    collect_params(embed.reducer, prefix + ".reducer", refs);
}

// ---------------------------------------------------------------------------
// Min-max normalization and the dynamic coder
// ---------------------------------------------------------------------------

Tensor minmax_normalize(const Context& ctx, const Tensor& x) {
    Tensor mn = reduce_min(ctx, x, -1);
    Tensor mx = reduce_max(ctx, x, -1);
    if (mx.item() == mn.item()) return Tensor::zeros(x.shape());
    return div(ctx, sub(ctx, x, mn), sub(ctx, mx, mn));
}

DynamicCoder make_dynamic_coder(int in, int out, Activation act, double dropout_p,
                                const DateTimeEmbedding* dt_embed, Rng& rng, int channels) {
    DynamicCoder coder;
    coder.gate_m = Param(Tensor::scalar(1.0));
    coder.inner = make_res_l(in, out, act, dropout_p, rng, channels);
    coder.dt_embed = dt_embed;
    return coder;
}

Tensor dynamic_coder_forward(const Context& ctx, const DynamicCoder& coder, const Tensor& x,
                             const CalendarStamps& stamps) {
    if (!coder.dt_embed) throw UsageError("dynamic coder has no date-time embedding attached");
    if (x.rank() != 2 || stamps.size() != static_cast<std::size_t>(x.cols())) {
        throw DimensionError("dynamic_coder_forward: " + std::to_string(stamps.size()) +
                             " stamps do not match input " + x.shape().str());
    }
    Tensor f = minmax_normalize(ctx, datetime_features(ctx, *coder.dt_embed, stamps));
    Tensor gated = mul(ctx, transpose(ctx, f), ctx.use(coder.gate_m));  // 1 x L
    return res_l_forward(ctx, coder.inner, add(ctx, x, gated));
}

void collect_params(DynamicCoder& coder, const std::string& prefix, ParamRefs& refs) {
    refs.emplace_back(prefix + ".gate_m", &coder.gate_m);
    collect_params(coder.inner, prefix + ".inner", refs);
}

// ---------------------------------------------------------------------------
// Spatial attention
// ---------------------------------------------------------------------------

Tensor spatial_attention_forward(const Context& ctx, const Tensor& x_prel, AttnNorm norm) {
    if (x_prel.rank() != 2) {
        throw DimensionError("spatial attention expects (C x tau), got " + x_prel.shape().str());
    }
    Tensor scores = tanh(ctx, x_prel);
    Tensor interact = matmul(ctx, scores, transpose(ctx, scores));  // C x C
    Tensor weights = softmax(ctx, interact, norm == AttnNorm::kRowwise ? 1 : 0);
    return add(ctx, x_prel, matmul(ctx, transpose(ctx, weights), x_prel));
}

}  // namespace stlf
