#include "stlf/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "stlf/rng.hpp"

namespace stlf {

// ---------------------------------------------------------------------------
// Civil calendar (Howard Hinnant's algorithms).
// ---------------------------------------------------------------------------

std::int64_t days_from_civil(int y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& year, unsigned& month, unsigned& day) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    day = doy - (153 * mp + 2) / 5 + 1;
    month = mp + (mp < 10 ? 3 : -9);
    year = static_cast<int>(y + (month <= 2));
}

std::optional<std::int64_t> parse_timestamp(const std::string& text) {
    int y = 0;
    unsigned mo = 0, d = 0, h = 0, mi = 0, s = 0;
    int n = std::sscanf(text.c_str(), "%d-%u-%u %u:%u:%u", &y, &mo, &d, &h, &mi, &s);
    if (n != 6) {
        s = 0;
        n = std::sscanf(text.c_str(), "%d-%u-%u %u:%u", &y, &mo, &d, &h, &mi);
        if (n != 5) return std::nullopt;
    }
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || s > 59) return std::nullopt;
    return days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + s;
}

std::string format_timestamp(std::int64_t epoch_seconds) {
    std::int64_t days = epoch_seconds / 86400;
    std::int64_t rem = epoch_seconds % 86400;
    if (rem < 0) {
        rem += 86400;
        days -= 1;
    }
    int y;
    unsigned mo, d;
    civil_from_days(days, y, mo, d);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u %02lld:%02lld:%02lld", y, mo, d,
                  static_cast<long long>(rem / 3600), static_cast<long long>(rem / 60 % 60),
                  static_cast<long long>(rem % 60));
    return buf;
}

// ---------------------------------------------------------------------------
// CSV loading
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

bool parse_double(const std::string& s, double& out) {
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
    auto [ptr, ec] = std::from_chars(begin, end, out);
    while (ptr < end && (*ptr == ' ' || *ptr == '\t' || *ptr == '\r')) ++ptr;
    return ec == std::errc() && ptr == end && begin != end;
}

bool parse_integer(const std::string& s, std::int64_t& out) {
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
    auto [ptr, ec] = std::from_chars(begin, end, out);
    while (ptr < end && (*ptr == ' ' || *ptr == '\t' || *ptr == '\r')) ++ptr;
    return ec == std::errc() && ptr == end && begin != end;
}

std::string strip_cr(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

}  // namespace

RawSeries load_csv(const std::string& path) {
    std::ifstream file(path);
    if (!file.is_open()) throw DataError("cannot open dataset file: " + path);

    std::string line;
    if (!std::getline(file, line)) throw DataError(path + ": empty file");
    line = strip_cr(line);
    std::vector<std::string> header = split_line(line);
    if (header.size() < 2) throw DataError(path + ": header needs a timestamp and one channel");

    RawSeries series;
    series.channel_names.assign(header.begin() + 1, header.end());
    const std::size_t C = series.channel_names.size();

    std::vector<std::int64_t> timestamps;
    std::vector<double> values;
    bool first_row = true;
    std::size_t row = 1;  // header was row 1
    while (std::getline(file, line)) {
        ++row;
        line = strip_cr(line);
        if (line.empty()) continue;
        std::vector<std::string> fields = split_line(line);
        if (fields.size() != C + 1) {
            throw DataError(path + ": row " + std::to_string(row) + " has " +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(C + 1));
        }
        std::int64_t ts;
        if (auto parsed = parse_timestamp(fields[0])) {
            ts = *parsed;
            if (!first_row && !series.calendar) {
                throw DataError(path + ": row " + std::to_string(row) +
                                " mixes datetime and index timestamps");
            }
            series.calendar = true;
        } else if (parse_integer(fields[0], ts)) {
            if (!first_row && series.calendar) {
                throw DataError(path + ": row " + std::to_string(row) +
                                " mixes datetime and index timestamps");
            }
            series.calendar = false;
        } else {
            throw DataError(path + ": row " + std::to_string(row) + ": unparseable timestamp '" +
                            fields[0] + "'");
        }
        first_row = false;
        timestamps.push_back(ts);
        for (std::size_t c = 0; c < C; ++c) {
            double v;
            if (!parse_double(fields[c + 1], v)) {
                throw DataError(path + ": row " + std::to_string(row) + ": bad numeric value '" +
                                fields[c + 1] + "' in column " + series.channel_names[c]);
            }
            values.push_back(v);
        }
    }
    if (timestamps.size() < 2) throw DataError(path + ": need at least two data rows");

    const std::int64_t interval = timestamps[1] - timestamps[0];
    if (interval <= 0) throw DataError(path + ": row 3: timestamps must be strictly increasing");
    for (std::size_t i = 1; i < timestamps.size(); ++i) {
        if (timestamps[i] - timestamps[i - 1] != interval) {
            throw DataError(path + ": row " + std::to_string(i + 2) +
                            ": non-uniform timestamp interval (expected " +
                            std::to_string(interval) + ")");
        }
    }
    series.interval = interval;
    series.timestamps = std::move(timestamps);
    series.values = Tensor::from_vector(std::move(values),
                                        Shape(static_cast<int>(series.timestamps.size()),
                                              static_cast<int>(C)));
    return series;
}

void write_csv(const RawSeries& series, const std::string& path) {
    std::ofstream file(path);
    if (!file.is_open()) throw DataError("cannot write dataset file: " + path);
    file << "date";
    for (const auto& name : series.channel_names) file << ',' << name;
    file << '\n';
    char buf[32];
    for (int t = 0; t < series.length(); ++t) {
        if (series.calendar) {
            file << format_timestamp(series.timestamps[t]);
        } else {
            file << series.timestamps[t];
        }
        for (int c = 0; c < series.channels(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", series.values.at(t, c));
            file << ',' << buf;
        }
        file << '\n';
    }
}

// ---------------------------------------------------------------------------
// Calendar stamps
// ---------------------------------------------------------------------------

namespace {

// Finest interval (seconds) at which a component still varies meaningfully.
std::int64_t component_resolution(Component c) {
    return c == Component::kMinute ? 900 : c == Component::kHour ? 3600 : 86400;
}

}  // namespace

CalendarStamps extract_stamps(const std::vector<std::int64_t>& timestamps, std::int64_t interval,
                              bool calendar, const std::vector<Component>& components) {
    if (!calendar && !components.empty()) {
        throw ConfigError("calendar components requested for a frame-index series");
    }
    for (Component c : components) {
        if (interval > component_resolution(c)) {
            throw ConfigError(std::string("component '") + component_name(c) +
                              "' requested but the series interval (" + std::to_string(interval) +
                              " s) is coarser than its resolution");
        }
    }
    CalendarStamps stamps;
    stamps.codes.resize(timestamps.size());
    for (auto& row : stamps.codes) row.fill(-1);
    for (std::size_t i = 0; i < timestamps.size(); ++i) {
        std::int64_t days = timestamps[i] / 86400;
        std::int64_t rem = timestamps[i] % 86400;
        if (rem < 0) {
            rem += 86400;
            days -= 1;
        }
        int y;
        unsigned mo, d;
        civil_from_days(days, y, mo, d);
        for (Component c : components) {
            int code = 0;
            switch (c) {
                case Component::kMonth: code = static_cast<int>(mo) - 1; break;
                case Component::kDate: code = static_cast<int>(d) - 1; break;
                case Component::kWeekday: code = static_cast<int>(((days % 7) + 10) % 7); break;
                case Component::kHour: code = static_cast<int>(rem / 3600); break;
                case Component::kMinute: code = static_cast<int>(rem / 60 % 60) / 15; break;
            }
            stamps.codes[i][static_cast<int>(c)] = code;
        }
    }
    return stamps;
}

std::vector<Component> supported_components(const RawSeries& series) {
    if (!series.calendar) return {};
    std::vector<Component> comps = {Component::kMonth, Component::kDate, Component::kWeekday,
                                    Component::kHour};
    if (series.interval <= 900) comps.push_back(Component::kMinute);
    return comps;
}

// ---------------------------------------------------------------------------
// Scaler
// ---------------------------------------------------------------------------

namespace {

Tensor apply_scaler(const Tensor& x, const std::vector<double>& mean,
                    const std::vector<double>& stddev, bool inverse) {
    if (x.rank() != 2 || x.cols() != static_cast<int>(mean.size())) {
        throw DimensionError("scaler: input " + x.shape().str() + " does not match " +
                             std::to_string(mean.size()) + " channels");
    }
    std::vector<double> out(x.size());
    const double* px = x.data();
    for (int t = 0; t < x.rows(); ++t) {
        for (int c = 0; c < x.cols(); ++c) {
            const std::size_t i = static_cast<std::size_t>(t) * x.cols() + c;
            if (inverse) {
                out[i] = px[i] * stddev[c] + mean[c];
            } else {
                out[i] = stddev[c] == 0.0 ? 0.0 : (px[i] - mean[c]) / stddev[c];
            }
        }
    }
    return Tensor::from_vector(std::move(out), x.shape());
}

}  // namespace

Tensor Scaler::transform(const Tensor& x) const { return apply_scaler(x, mean, stddev, false); }
Tensor Scaler::inverse(const Tensor& x) const { return apply_scaler(x, mean, stddev, true); }

// ---------------------------------------------------------------------------
// Split and scale
// ---------------------------------------------------------------------------

std::shared_ptr<const PreparedData> split_and_scale(const RawSeries& series, SplitRatio ratio) {
    if (ratio.train < 1 || ratio.val < 0 || ratio.test < 0) {
        throw ConfigError("split ratio parts must be positive (train) and non-negative");
    }
    const int L = series.length();
    const int C = series.channels();
    const int parts = ratio.train + ratio.val + ratio.test;
    auto data = std::make_shared<PreparedData>();
    data->channel_names = series.channel_names;
    data->C = C;
    data->interval = series.interval;
    data->calendar = series.calendar;
    data->ratio = ratio;

    const int train_len = static_cast<int>(static_cast<std::int64_t>(L) * ratio.train / parts);
    const int val_len = static_cast<int>(static_cast<std::int64_t>(L) * ratio.val / parts);
    const int test_len = L - train_len - val_len;
    if (train_len < 1) throw DataError("train split is empty");
    data->lengths = {train_len, val_len, test_len};

    // Fit the scaler on the train segment only.
    Scaler scaler;
    scaler.mean.assign(C, 0.0);
    scaler.stddev.assign(C, 0.0);
    for (int t = 0; t < train_len; ++t)
        for (int c = 0; c < C; ++c) scaler.mean[c] += series.values.at(t, c);
    for (int c = 0; c < C; ++c) scaler.mean[c] /= train_len;
    for (int t = 0; t < train_len; ++t) {
        for (int c = 0; c < C; ++c) {
            const double d = series.values.at(t, c) - scaler.mean[c];
            scaler.stddev[c] += d * d;
        }
    }
    for (int c = 0; c < C; ++c) {
        scaler.stddev[c] = std::sqrt(scaler.stddev[c] / train_len);
        if (scaler.stddev[c] == 0.0) {
            data->warnings.push_back("channel '" + series.channel_names[c] +
                                     "' is constant on the train split; scaled to zeros");
        }
    }
    data->scaler = scaler;

    const int offsets[3] = {0, train_len, train_len + val_len};
    for (int s = 0; s < 3; ++s) {
        const int len = data->lengths[s];
        auto buf = std::make_shared<std::vector<double>>(static_cast<std::size_t>(len) * C);
        for (int t = 0; t < len; ++t) {
            for (int c = 0; c < C; ++c) {
                const double v = series.values.at(offsets[s] + t, c);
                (*buf)[static_cast<std::size_t>(t) * C + c] =
                    scaler.stddev[c] == 0.0 ? 0.0 : (v - scaler.mean[c]) / scaler.stddev[c];
            }
        }
        data->segments[s] = std::move(buf);
        if (series.calendar) {
            std::vector<std::int64_t> ts(series.timestamps.begin() + offsets[s],
                                         series.timestamps.begin() + offsets[s] + len);
            data->stamps[s] = extract_stamps(ts, series.interval, true,
                                             supported_components(series));
        }
    }
    return data;
}

std::string dataset_manifest(const PreparedData& data) {
    nlohmann::json j;
    j["channels"] = data.C;
    j["channel_names"] = data.channel_names;
    j["interval"] = data.interval;
    j["calendar"] = data.calendar;
    j["rows"] = data.lengths[0] + data.lengths[1] + data.lengths[2];
    j["ratio"] = {data.ratio.train, data.ratio.val, data.ratio.test};
    j["split_sizes"] = {data.lengths[0], data.lengths[1], data.lengths[2]};
    j["scaler_mean"] = data.scaler.mean;
    j["scaler_std"] = data.scaler.stddev;
    j["warnings"] = data.warnings;
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

WindowedDataset::WindowedDataset(std::shared_ptr<const PreparedData> data, int T, int tau,
                                 int stride, bool allow_empty_splits)
    : data_(std::move(data)), T_(T), tau_(tau), stride_(stride) {
    if (T < 1 || tau < 1 || stride < 1) throw ConfigError("window T, tau, stride must be >= 1");
    for (int s = 0; s < 3; ++s) {
        const int len = data_->lengths[s];
        const int usable = len - T - tau;
        counts_[s] = usable < 0 ? 0 : usable / stride + 1;
        if (counts_[s] == 0 && !allow_empty_splits) {
            static const char* names[3] = {"train", "val", "test"};
            throw DataError(std::string("segment '") + names[s] + "' of length " +
                            std::to_string(len) + " cannot hold one window of T+tau = " +
                            std::to_string(T + tau));
        }
    }
}

int WindowedDataset::count(Split split) const { return counts_[static_cast<int>(split)]; }

Window WindowedDataset::window(Split split, int index) const {
    const int s = static_cast<int>(split);
    if (index < 0 || index >= counts_[s]) {
        throw UsageError("window index " + std::to_string(index) + " out of range");
    }
    const int start = index * stride_;
    Window w;
    w.obs = Tensor::matrix_view(data_->segments[s], static_cast<std::size_t>(start), T_, data_->C);
    w.target = Tensor::matrix_view(data_->segments[s], static_cast<std::size_t>(start + T_), tau_,
                                   data_->C);
    if (data_->calendar) {
        w.obs_stamps = data_->stamps[s].slice(static_cast<std::size_t>(start), T_);
        w.target_stamps = data_->stamps[s].slice(static_cast<std::size_t>(start + T_), tau_);
        w.has_stamps = true;
    }
    return w;
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

void SyntheticSpec::validate() const {
    if (length < 2 || channels < 1) throw ConfigError("synthetic spec needs length >= 2, C >= 1");
    if (period <= 0) throw ConfigError("synthetic period must be positive");
    if (noise_sigma < 0) throw ConfigError("synthetic noise sigma must be >= 0");
    std::vector<bool> targeted(channels, false);
    for (const Lag& lag : lags) {
        if (lag.source < 0 || lag.source >= channels || lag.target <= lag.source ||
            lag.target >= channels) {
            throw ConfigError("lag coupling must reference a lower-index source channel");
        }
        if (lag.lag < 0 || lag.lag >= period) {
            throw ConfigError("lag must lie in [0, period)");
        }
        if (targeted[lag.target]) {
            throw ConfigError("channel " + std::to_string(lag.target) +
                              " has more than one lag source");
        }
        targeted[lag.target] = true;
    }
    if (spike && (spike_weekday < 0 || spike_weekday > 6 || spike_hour < 0 || spike_hour > 23)) {
        throw ConfigError("spike rule needs weekday 0-6 and hour 0-23");
    }
}

RawSeries gen_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const std::int64_t epoch = days_from_civil(2021, 1, 1) * 86400;
    const int L = spec.length;
    const int C = spec.channels;

    RawSeries series;
    series.calendar = true;
    series.interval = 3600;
    series.timestamps.resize(L);
    for (int t = 0; t < L; ++t) series.timestamps[t] = epoch + static_cast<std::int64_t>(t) * 3600;

    auto spike_at = [&](int t) -> double {
        if (!spec.spike) return 0.0;
        const std::int64_t days = series.timestamps[t] / 86400;
        const int weekday = static_cast<int>(((days % 7) + 10) % 7);
        const int hour = static_cast<int>(series.timestamps[t] % 86400 / 3600);
        return (weekday == spec.spike_weekday && hour == spec.spike_hour) ? spec.spike_amplitude
                                                                          : 0.0;
    };

    const double two_pi = 2.0 * 3.14159265358979323846;
    std::vector<std::vector<double>> columns(C, std::vector<double>(L, 0.0));
    Rng rng(spec.seed);
    for (int c = 0; c < C; ++c) {
        const SyntheticSpec::Lag* lag = nullptr;
        for (const auto& l : spec.lags) {
            if (l.target == c) lag = &l;
        }
        for (int t = 0; t < L; ++t) {
            double v;
            if (lag) {
                v = lag->gain * columns[lag->source][std::max(t - lag->lag, 0)];
            } else if (c == 0) {
                v = std::sin(two_pi * t / spec.period) + spike_at(t);
            } else {
                // free channel: phase-shifted sinusoid
                v = std::sin(two_pi * (t + c * spec.period / C) / spec.period);
            }
            if (spec.noise_sigma > 0.0) v += rng.normal(0.0, spec.noise_sigma);
            columns[c][t] = v;
        }
    }

    std::vector<double> values(static_cast<std::size_t>(L) * C);
    for (int t = 0; t < L; ++t)
        for (int c = 0; c < C; ++c) values[static_cast<std::size_t>(t) * C + c] = columns[c][t];
    series.values = Tensor::from_vector(std::move(values), Shape(L, C));
    series.channel_names.resize(C);
    for (int c = 0; c < C; ++c) series.channel_names[c] = "v" + std::to_string(c);
    return series;
}

}  // namespace stlf
