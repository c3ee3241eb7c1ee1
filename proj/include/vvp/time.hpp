#pragma once

#include <chrono>
#include <memory>
#include <cstdio>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vvp {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;
using Clock = std::function<Timestamp()>;

inline Clock system_clock() {
  return [] { return std::chrono::time_point_cast<std::chrono::milliseconds>(std::chrono::system_clock::now()); };
}

/// Clock for tests and scripted playthroughs; time moves only when told to.
/// Copies share one time source, so clocks handed out stay valid after
/// the owner is moved.
class ManualClock {
 public:
  explicit ManualClock(Timestamp start = Timestamp{}) : now_(std::make_shared<Timestamp>(start)) {}

  Timestamp now() const { return *now_; }
  void advance(std::chrono::milliseconds by) { *now_ += by; }
  void set(Timestamp t) { *now_ = t; }

  Clock clock() const {
    return [now = now_] { return *now; };
  }

 private:
  std::shared_ptr<Timestamp> now_;
};

/// "YYYY-MM-DDTHH:MM:SS.mmmZ"
inline std::string format_rfc3339(Timestamp t) {
  using namespace std::chrono;
  const auto day = floor<days>(t);
  const year_month_day ymd{day};
  const hh_mm_ss<milliseconds> hms{t - day};
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()), static_cast<int>(hms.subseconds().count()));
  return buf;
}

/// Accepts UTC timestamps with an optional fractional part (truncated to
/// milliseconds). Offsets other than Z are rejected.
inline Timestamp parse_rfc3339(std::string_view text) {
  using namespace std::chrono;
  auto fail = [&] { return std::invalid_argument("bad RFC 3339 timestamp '" + std::string(text) + "'"); };
  auto digits = [&](std::size_t pos, std::size_t count) {
    if (pos + count > text.size()) throw fail();
    int value = 0;
    for (std::size_t i = pos; i < pos + count; ++i) {
      if (text[i] < '0' || text[i] > '9') throw fail();
      value = value * 10 + (text[i] - '0');
    }
    return value;
  };
  auto expect = [&](std::size_t pos, char c) {
    if (pos >= text.size() || (text[pos] != c && !(c == 'T' && text[pos] == 't'))) throw fail();
  };
  const int y = digits(0, 4);
  expect(4, '-');
  const int mo = digits(5, 2);
  expect(7, '-');
  const int d = digits(8, 2);
  expect(10, 'T');
  const int h = digits(11, 2);
  expect(13, ':');
  const int mi = digits(14, 2);
  expect(16, ':');
  const int s = digits(17, 2);
  std::size_t pos = 19;
  int ms = 0;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    int scale = 100;
    const std::size_t begin = pos;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
      ms += (text[pos] - '0') * scale;
      scale /= 10;
      ++pos;
    }
    if (pos == begin) throw fail();
  }
  if (pos + 1 != text.size() || (text[pos] != 'Z' && text[pos] != 'z')) throw fail();
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) throw fail();
  return sys_days{ymd} + hours{h} + minutes{mi} + seconds{s} + milliseconds{ms};
}

}  // namespace vvp
