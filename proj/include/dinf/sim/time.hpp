#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace dinf {

// Simulated time in whole nanoseconds. Never negative.
class SimTime {
 public:
  constexpr SimTime() = default;

  static constexpr SimTime from_ns(std::int64_t ns) {
    if (ns < 0) throw std::invalid_argument("SimTime: negative nanoseconds");
    return SimTime(ns);
  }

  // Rounds half-up to the nearest nanosecond.
  static SimTime from_seconds(double seconds) {
    if (!(seconds >= 0.0) || !std::isfinite(seconds)) {
      throw std::invalid_argument("SimTime: seconds must be finite and non-negative");
    }
    const double ns = std::floor(seconds * 1e9 + 0.5);
    if (ns > static_cast<double>(kMaxNs)) throw std::overflow_error("SimTime: out of range");
    return SimTime(static_cast<std::int64_t>(ns));
  }

  static constexpr SimTime from_us(std::int64_t us) { return from_ns(us * 1000); }
  static constexpr SimTime from_ms(std::int64_t ms) { return from_ns(ms * 1000000); }
  static constexpr SimTime zero() { return SimTime(0); }
  static constexpr SimTime infinity() { return SimTime(kMaxNs); }

  constexpr std::int64_t ns() const { return ns_; }
  constexpr double seconds() const { return static_cast<double>(ns_) * 1e-9; }
  constexpr double micros() const { return static_cast<double>(ns_) * 1e-3; }
  constexpr bool is_infinite() const { return ns_ == kMaxNs; }

  constexpr SimTime& operator+=(SimTime other) {
    if (ns_ > kMaxNs - other.ns_) throw std::overflow_error("SimTime: addition overflow");
    ns_ += other.ns_;
    return *this;
  }
  friend constexpr SimTime operator+(SimTime a, SimTime b) { return a += b; }

  // Difference of two instants; the left operand must not precede the right.
  friend constexpr SimTime operator-(SimTime a, SimTime b) {
    if (a.ns_ < b.ns_) throw std::logic_error("SimTime: negative difference");
    return SimTime(a.ns_ - b.ns_);
  }

  friend constexpr auto operator<=>(SimTime, SimTime) = default;

  friend std::ostream& operator<<(std::ostream& os, SimTime t) { return os << t.ns_ << "ns"; }

 private:
  static constexpr std::int64_t kMaxNs = std::numeric_limits<std::int64_t>::max();
  constexpr explicit SimTime(std::int64_t ns) : ns_(ns) {}
  std::int64_t ns_ = 0;
};

// Process identifiers are dense per engine; devices come first, then network processes.
enum class ProcessId : std::uint32_t {};

constexpr std::size_t index_of(ProcessId id) { return static_cast<std::size_t>(id); }
constexpr ProcessId process_id(std::size_t index) { return static_cast<ProcessId>(index); }

inline std::ostream& operator<<(std::ostream& os, ProcessId id) { return os << index_of(id); }

}  // namespace dinf
