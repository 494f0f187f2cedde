#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stlf/calendar.hpp"
#include "stlf/tensor.hpp"

namespace stlf {

// ---------------------------------------------------------------------------
// Civil calendar helpers (proleptic Gregorian, no timezone).
// ---------------------------------------------------------------------------
std::int64_t days_from_civil(int year, unsigned month, unsigned day);
void civil_from_days(std::int64_t days, int& year, unsigned& month, unsigned& day);

// Accepts "YYYY-MM-DD HH:MM:SS" and "YYYY-MM-DD HH:MM"; returns seconds
// since 1970-01-01 00:00:00.
std::optional<std::int64_t> parse_timestamp(const std::string& text);
std::string format_timestamp(std::int64_t epoch_seconds);

// ---------------------------------------------------------------------------
// Raw multivariate series. Timestamps are epoch seconds for calendar data or
// plain frame indices for trajectory-style data (calendar = false).
// ---------------------------------------------------------------------------
struct RawSeries {
    std::vector<std::int64_t> timestamps;
    Tensor values;  // L x C
    std::vector<std::string> channel_names;
    bool calendar = true;
    std::int64_t interval = 0;  // seconds, or frames for index data

    int length() const { return values.rank() == 2 ? values.rows() : 0; }
    int channels() const { return values.rank() == 2 ? values.cols() : 0; }
};

// First header column is the timestamp column; the rest are numeric
// channels. Timestamps must be strictly increasing with a uniform interval;
// violations are reported with their 1-based file row.
RawSeries load_csv(const std::string& path);

void write_csv(const RawSeries& series, const std::string& path);

// Calendar stamp extraction. Requesting a component finer than the series
// interval (e.g. minute bins on hourly data) or any component on
// frame-index data raises ConfigError. Unrequested component slots are -1.
CalendarStamps extract_stamps(const std::vector<std::int64_t>& timestamps,
                              std::int64_t interval, bool calendar,
                              const std::vector<Component>& components);

// Components the interval can support (month/date/weekday/hour, plus minute
// when the interval is finer than an hour).
std::vector<Component> supported_components(const RawSeries& series);

// ---------------------------------------------------------------------------
// Standardization.
// ---------------------------------------------------------------------------
struct Scaler {
    std::vector<double> mean;
    std::vector<double> stddev;  // population std; 0 marks a degenerate channel

    Tensor transform(const Tensor& x) const;
    Tensor inverse(const Tensor& x) const;
};

// ---------------------------------------------------------------------------
// Chronologically split, standardized series: the windowing precursor.
// Scaler statistics come from the train segment only.
// ---------------------------------------------------------------------------
struct SplitRatio {
    int train = 6, val = 2, test = 2;
    bool operator==(const SplitRatio&) const = default;
};

struct PreparedData {
    std::vector<std::string> channel_names;
    int C = 0;
    std::int64_t interval = 0;
    bool calendar = true;
    SplitRatio ratio;

    // Standardized row-major (len x C) segments.
    std::array<std::shared_ptr<const std::vector<double>>, 3> segments;
    std::array<int, 3> lengths = {0, 0, 0};
    // Full stamps per segment (all supported components); empty if !calendar.
    std::array<CalendarStamps, 3> stamps;

    Scaler scaler;
    std::vector<std::string> warnings;
};

enum class Split { kTrain = 0, kVal = 1, kTest = 2 };

std::shared_ptr<const PreparedData> split_and_scale(const RawSeries& series, SplitRatio ratio);

// JSON manifest: rows, channels, interval, split sizes, scaler stats.
std::string dataset_manifest(const PreparedData& data);

// ---------------------------------------------------------------------------
// Sliding windows. Window tensors are zero-copy views into the segment
// buffers; stamps are sliced per window.
// ---------------------------------------------------------------------------
struct Window {
    Tensor obs;     // T x C
    Tensor target;  // tau x C
    CalendarStamps obs_stamps;
    CalendarStamps target_stamps;
    bool has_stamps = false;
};

class WindowedDataset {
 public:
    WindowedDataset() = default;
    WindowedDataset(std::shared_ptr<const PreparedData> data, int T, int tau, int stride = 1,
                    bool allow_empty_splits = false);

    int count(Split split) const;
    Window window(Split split, int index) const;

    int T() const { return T_; }
    int tau() const { return tau_; }
    const PreparedData& prepared() const { return *data_; }
    std::shared_ptr<const PreparedData> prepared_ptr() const { return data_; }

 private:
    std::shared_ptr<const PreparedData> data_;
    int T_ = 0, tau_ = 0, stride_ = 1;
    std::array<int, 3> counts_ = {0, 0, 0};
};

// ---------------------------------------------------------------------------
// Synthetic generator: channel 0 is sin(2*pi*t/period) plus an optional
// weekday-hour spike plus gaussian noise; lag-coupled channels follow their
// source with a gain; remaining channels are phase-shifted sinusoids.
// Timestamps are synthesized hourly from 2021-01-01 00:00:00.
// ---------------------------------------------------------------------------
struct SyntheticSpec {
    int length = 4000;
    int channels = 4;
    double period = 24.0;  // in steps (hours)

    struct Lag {
        int target = 1;
        int source = 0;
        int lag = 3;
        double gain = 1.0;
        bool operator==(const Lag&) const = default;
    };
    std::vector<Lag> lags;

    bool spike = false;
    int spike_weekday = 2;  // Monday = 0
    int spike_hour = 9;
    double spike_amplitude = 2.0;

    double noise_sigma = 0.0;
    std::uint64_t seed = 2021;

    void validate() const;
    bool operator==(const SyntheticSpec&) const = default;
};

RawSeries gen_synthetic(const SyntheticSpec& spec);

}  // namespace stlf
