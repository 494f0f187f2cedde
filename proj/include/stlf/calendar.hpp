#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace stlf {

// Calendar components usable as date-time embedding inputs. Codes are
// 0-based: month 0-11, date 0-30 (day of month minus one), weekday 0-6 with
// Monday = 0, hour 0-23, minute 0-3 (15-minute bins).
enum class Component { kMonth = 0, kDate, kWeekday, kHour, kMinute };

inline constexpr int kNumComponents = 5;

const char* component_name(Component c);
int default_cardinality(Component c);
Component component_from_name(const std::string& name);

struct CalendarStamps {
    // codes[step][component]
    std::vector<std::array<int, kNumComponents>> codes;

    std::size_t size() const { return codes.size(); }
    bool empty() const { return codes.empty(); }
    int code(std::size_t step, Component c) const {
        return codes[step][static_cast<int>(c)];
    }

    CalendarStamps slice(std::size_t begin, std::size_t count) const {
        CalendarStamps out;
        out.codes.assign(codes.begin() + begin, codes.begin() + begin + count);
        return out;
    }
};

}  // namespace stlf
