#pragma once

// Counter-based random streams (Philox4x32-10) so that every replication,
// break index and process draws from its own stream regardless of which
// thread evaluates it.

#include <array>
#include <cmath>
#include <algorithm>
#include <cstdint>
#include <exception>
#include <numbers>
#include <thread>
#include <vector>

namespace multibreak {

class Philox4x32 {
 public:
  using ctr_type = std::array<std::uint32_t, 4>;
  using key_type = std::array<std::uint32_t, 2>;

  static ctr_type block(ctr_type ctr, key_type key) {
    for (int r = 0; r < 10; ++r) {
      ctr = round(ctr, key);
      key[0] += 0x9E3779B9u;
      key[1] += 0xBB67AE85u;
    }
    return ctr;
  }

 private:
  static ctr_type round(const ctr_type& c, const key_type& k) {
    const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * c[0];
    const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
};

/// A single random stream identified by (seed, index, tag). Draws are a pure
/// function of those three values and the draw position.
class Stream {
 public:
  Stream(std::uint64_t seed, std::uint64_t index, std::uint32_t tag)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        ctr_{static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), tag, 0} {}

  std::uint32_t next_u32() {
    if (pos_ == 4) {
      buf_ = Philox4x32::block(ctr_, key_);
      ++ctr_[3];
      pos_ = 0;
    }
    return buf_[pos_++];
  }

  /// Uniform on the open interval (0, 1) with 53 bits.
  double uniform() {
    const std::uint64_t a = next_u32() >> 5, b = next_u32() >> 6;
    return (static_cast<double>(a * 67108864ull + b) + 0.5) / 9007199254740992.0;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform(), u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(th);
    have_spare_ = true;
    return r * std::cos(th);
  }

 private:
  Philox4x32::key_type key_;
  Philox4x32::ctr_type ctr_;
  std::array<std::uint32_t, 4> buf_{};
  int pos_ = 4;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

/// Stream tags. Keep distinct per consumer so streams never overlap; the
/// per-break kinds are combined with the break index by tag().
namespace tags {
inline constexpr std::uint32_t zeta_pre = 1, zeta_post = 2, eta_pre = 3, eta_post = 4, vw = 5, kl_zeta_pre = 6,
                               kl_zeta_post = 7, kl_eta_pre = 8, kl_eta_post = 9, pso = 10, ci = 11, dgp = 12,
                               multistart = 13;
inline std::uint32_t tag(std::uint32_t kind, int j = 0) { return kind * 0x1000u + static_cast<std::uint32_t>(j); }
}  // namespace tags

inline unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

/// Run f(i) for i in [0, count) on up to `threads` workers. Work is assigned
/// by striding, and results must be written by index so output does not
/// depend on the schedule.
template <class F>
void parallel_for(std::size_t count, unsigned threads, F&& f) {
  threads = resolve_threads(threads);
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) f(i);
    return;
  }
  const auto workers = static_cast<std::size_t>(std::min<std::size_t>(threads, count));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += workers) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace multibreak
