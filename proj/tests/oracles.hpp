// Brute-force reference implementations written as straight-line loops over
// plain vectors. They deliberately avoid the tensor/op layer so they stay an
// independent check on it.
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "stlf/model.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major: Mat[i][j]

inline Mat from_tensor(const stlf::Tensor& t) {
    Mat m(t.rows(), Vec(t.cols()));
    for (int i = 0; i < t.rows(); ++i)
        for (int j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
    return m;
}

inline Mat transpose(const Mat& x) {
    Mat out(x[0].size(), Vec(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < x[0].size(); ++j) out[j][i] = x[i][j];
    return out;
}

inline double act(stlf::Activation a, double v, double alpha = 0.01) {
    if (a == stlf::Activation::kSilu) return v / (1.0 + std::exp(-v));
    return v > 0.0 ? v : alpha * v;
}

// y = W.x + b for one input row x (length in), W flattened (out x in).
inline Vec dense(const Vec& w_flat, const Vec& b, const Vec& x, int out, int in) {
    Vec y(out, 0.0);
    for (int o = 0; o < out; ++o) {
        double acc = b.empty() ? 0.0 : b[o];
        for (int i = 0; i < in; ++i) acc += w_flat[static_cast<std::size_t>(o) * in + i] * x[i];
        y[o] = acc;
    }
    return y;
}

struct ResLWeights {
    Vec w1, b1, w2, b2, w3, b3;
    int in = 0, out = 0;
    stlf::Activation activation = stlf::Activation::kSilu;
    double alpha = 0.01;
};

// Channel-shared Res-L in eval mode: y = L1(x) + L3(g(L2(x))) per row.
inline Mat res_l(const ResLWeights& w, const Mat& x) {
    Mat y(x.size());
    for (std::size_t c = 0; c < x.size(); ++c) {
        Vec skip = dense(w.w1, w.b1, x[c], w.out, w.in);
        Vec h = dense(w.w2, w.b2, x[c], w.out, w.in);
        for (auto& v : h) v = act(w.activation, v, w.alpha);
        Vec refined = dense(w.w3, w.b3, h, w.out, w.out);
        y[c].resize(w.out);
        for (int o = 0; o < w.out; ++o) y[c][o] = skip[o] + refined[o];
    }
    return y;
}

// Spatial attention as the explicit double sum:
//   S = tanh(X); I[i][j] = sum_t S[i][t]*S[j][t]; W = row softmax of I;
//   out = X + sum_i outer((W row i)^T, X row i).
inline Mat spatial_attention(const Mat& x) {
    const std::size_t C = x.size(), tau = x[0].size();
    Mat s(C, Vec(tau));
    for (std::size_t i = 0; i < C; ++i)
        for (std::size_t t = 0; t < tau; ++t) s[i][t] = std::tanh(x[i][t]);
    Mat inter(C, Vec(C, 0.0));
    for (std::size_t i = 0; i < C; ++i)
        for (std::size_t j = 0; j < C; ++j)
            for (std::size_t t = 0; t < tau; ++t) inter[i][j] += s[i][t] * s[j][t];
    Mat w(C, Vec(C));
    for (std::size_t i = 0; i < C; ++i) {
        double mx = inter[i][0];
        for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, inter[i][j]);
        double total = 0.0;
        for (std::size_t j = 0; j < C; ++j) {
            w[i][j] = std::exp(inter[i][j] - mx);
            total += w[i][j];
        }
        for (std::size_t j = 0; j < C; ++j) w[i][j] /= total;
    }
    Mat out = x;
    for (std::size_t i = 0; i < C; ++i) {
        for (std::size_t j = 0; j < C; ++j) {
            for (std::size_t t = 0; t < tau; ++t) out[j][t] += w[i][j] * x[i][t];
        }
    }
    return out;
}

struct DateTimeWeights {
    // one flattened (cardinality x d) table per component, in declared order
    std::vector<Vec> tables;
    std::vector<int> cardinalities;
    int d = 8;
    Vec reducer_w;  // 1 x (d * #components)
    Vec reducer_b;  // 1
};

// Per step: gather one row from each table, concatenate, dot with reducer.
inline Vec datetime_feature(const DateTimeWeights& w, const std::vector<std::vector<int>>& codes) {
    Vec out(codes.size());
    for (std::size_t step = 0; step < codes.size(); ++step) {
        Vec joined;
        for (std::size_t comp = 0; comp < w.tables.size(); ++comp) {
            const int idx = codes[step][comp];
            for (int k = 0; k < w.d; ++k) {
                joined.push_back(w.tables[comp][static_cast<std::size_t>(idx) * w.d + k]);
            }
        }
        double acc = w.reducer_b[0];
        for (std::size_t k = 0; k < joined.size(); ++k) acc += w.reducer_w[k] * joined[k];
        out[step] = acc;
    }
    return out;
}

inline Vec minmax(const Vec& x) {
    double mn = x[0], mx = x[0];
    for (double v : x) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    Vec out(x.size(), 0.0);
    if (mx == mn) return out;
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mn) / (mx - mn);
    return out;
}

// Centered moving average with an explicitly built replicate-padded series.
inline Mat moving_average(const Mat& x, int kernel) {
    const int T = static_cast<int>(x.size());
    const int C = static_cast<int>(x[0].size());
    const int half = kernel / 2;
    Mat out(T, Vec(C));
    for (int c = 0; c < C; ++c) {
        Vec padded;
        for (int k = 0; k < half; ++k) padded.push_back(x[0][c]);
        for (int t = 0; t < T; ++t) padded.push_back(x[t][c]);
        for (int k = 0; k < half; ++k) padded.push_back(x[T - 1][c]);
        for (int t = 0; t < T; ++t) {
            double acc = 0.0;
            for (int k = 0; k < kernel; ++k) acc += padded[t + k];
            out[t][c] = acc / kernel;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Full STL forward from a named parameter snapshot (eval mode).
// ---------------------------------------------------------------------------

struct ParamSnapshot {
    std::map<std::string, Vec> values;
    std::map<std::string, std::vector<int>> shapes;

    const Vec& vec(const std::string& name) const { return values.at(name); }
};

inline ParamSnapshot snapshot(stlf::Forecaster& model) {
    ParamSnapshot snap;
    for (auto& [name, p] : model.params()) {
        snap.values[name] = p->value.to_vector();
        std::vector<int> dims;
        for (int i = 0; i < p->value.rank(); ++i) dims.push_back(p->value.shape().dim(i));
        snap.shapes[name] = dims;
    }
    return snap;
}

inline ResLWeights res_l_weights(const ParamSnapshot& snap, const std::string& prefix,
                                 int in, int out, stlf::Activation activation, double alpha) {
    ResLWeights w;
    w.w1 = snap.vec(prefix + ".l1.weight");
    w.b1 = snap.vec(prefix + ".l1.bias");
    w.w2 = snap.vec(prefix + ".l2.weight");
    w.b2 = snap.vec(prefix + ".l2.bias");
    w.w3 = snap.vec(prefix + ".l3.weight");
    w.b3 = snap.vec(prefix + ".l3.bias");
    w.in = in;
    w.out = out;
    w.activation = activation;
    w.alpha = alpha;
    return w;
}

inline Mat positional_encoding(int T, int C) {
    Mat pe(T, Vec(C));
    for (int p = 0; p < T; ++p) {
        for (int j = 0; j < C; ++j) {
            const int pair = j - (j % 2);
            const double arg = p * std::pow(10000.0, -static_cast<double>(pair) / C);
            pe[p][j] = j % 2 == 0 ? std::sin(arg) : std::cos(arg);
        }
    }
    return pe;
}

inline DateTimeWeights datetime_weights(const ParamSnapshot& snap, const std::string& prefix,
                                        const std::vector<stlf::Component>& order,
                                        int minute_bins) {
    DateTimeWeights w;
    for (stlf::Component c : order) {
        w.tables.push_back(snap.vec(prefix + ".table_" + stlf::component_name(c)));
        w.cardinalities.push_back(c == stlf::Component::kMinute ? minute_bins
                                                                : stlf::default_cardinality(c));
    }
    w.reducer_w = snap.vec(prefix + ".reducer.weight");
    w.reducer_b = snap.vec(prefix + ".reducer.bias");
    return w;
}

inline std::vector<std::vector<int>> stamp_codes(const stlf::CalendarStamps& stamps,
                                                 const std::vector<stlf::Component>& order) {
    std::vector<std::vector<int>> codes(stamps.size());
    for (std::size_t s = 0; s < stamps.size(); ++s) {
        for (stlf::Component c : order) codes[s].push_back(stamps.code(s, c));
    }
    return codes;
}

// obs is (T x C); returns (tau x C). Channel-shared weights, eval mode.
inline Mat stl_forward(const stlf::ModelConfig& cfg, const ParamSnapshot& snap, const Mat& obs,
                       const stlf::CalendarStamps* obs_stamps,
                       const stlf::CalendarStamps* tgt_stamps) {
    const Mat x = transpose(obs);  // C x T
    Mat sum(cfg.C, Vec(cfg.tau, 0.0));

    if (cfg.route_core) {
        auto core = res_l(res_l_weights(snap, "core", cfg.T, cfg.tau, cfg.activation,
                                        cfg.leaky_alpha),
                          x);
        for (int c = 0; c < cfg.C; ++c)
            for (int t = 0; t < cfg.tau; ++t) sum[c][t] += core[c][t];
    }

    const Mat pe = positional_encoding(cfg.T, cfg.C);
    Mat x_pe = x;
    for (int c = 0; c < cfg.C; ++c)
        for (int t = 0; t < cfg.T; ++t) x_pe[c][t] += pe[t][c];

    if (cfg.route_temporal && cfg.T <= cfg.theta_T) {
        const auto dtw = datetime_weights(snap, "temporal.dt_embed", cfg.datetime_components,
                                          cfg.minute_bins);
        const double m_enc = snap.vec("temporal.encoder.gate_m")[0];
        Vec f_obs = minmax(datetime_feature(dtw, stamp_codes(*obs_stamps, cfg.datetime_components)));
        Mat gated = x_pe;
        for (int c = 0; c < cfg.C; ++c)
            for (int t = 0; t < cfg.T; ++t) gated[c][t] += m_enc * f_obs[t];
        Mat enc = res_l(res_l_weights(snap, "temporal.encoder.inner", cfg.T, cfg.hidden_size,
                                      cfg.activation, cfg.leaky_alpha),
                        gated);
        Mat mid = res_l(res_l_weights(snap, "temporal.mid1", cfg.hidden_size, cfg.hidden_size,
                                      cfg.activation, cfg.leaky_alpha),
                        enc);
        Mat prelim = res_l(res_l_weights(snap, "temporal.mid2", cfg.hidden_size, cfg.tau,
                                         cfg.activation, cfg.leaky_alpha),
                           mid);
        const double m_dec = snap.vec("temporal.decoder.gate_m")[0];
        Vec f_tgt = minmax(datetime_feature(dtw, stamp_codes(*tgt_stamps, cfg.datetime_components)));
        for (int c = 0; c < cfg.C; ++c)
            for (int t = 0; t < cfg.tau; ++t) prelim[c][t] += m_dec * f_tgt[t];
        Mat dec = res_l(res_l_weights(snap, "temporal.decoder.inner", cfg.tau, cfg.tau,
                                      cfg.activation, cfg.leaky_alpha),
                        prelim);
        for (int c = 0; c < cfg.C; ++c)
            for (int t = 0; t < cfg.tau; ++t) sum[c][t] += dec[c][t];
    }

    if (cfg.route_spatial) {
        Mat s1 = res_l(res_l_weights(snap, "spatial.pre1", cfg.T, cfg.hidden_size,
                                     cfg.activation, cfg.leaky_alpha),
                       x_pe);
        Mat s2 = res_l(res_l_weights(snap, "spatial.pre2", cfg.hidden_size, cfg.tau,
                                     cfg.activation, cfg.leaky_alpha),
                       s1);
        Mat attended = spatial_attention(s2);
        Mat post = res_l(res_l_weights(snap, "spatial.post", cfg.tau, cfg.tau, cfg.activation,
                                       cfg.leaky_alpha),
                         attended);
        for (int c = 0; c < cfg.C; ++c)
            for (int t = 0; t < cfg.tau; ++t) sum[c][t] += post[c][t];
    }

    return transpose(sum);  // tau x C
}

}  // namespace oracle
