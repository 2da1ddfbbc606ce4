#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace pathdiff {

// Error categories map one-to-one onto CLI exit codes (2 and 3).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t pixels() const { return std::size_t(height) * std::size_t(width); }
  std::size_t size() const { return std::size_t(channels) * pixels(); }
  bool operator==(const Shape&) const = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

/// Dense channel-major (C, H, W) grid of reals.
///
/// Images on disk are channel-last; conversion happens in the dataset IO
/// layer only.
template <typename Real>
class Image {
 public:
  using value_type = Real;

  Image() = default;
  explicit Image(Shape shape, Real fill = Real(0)) : shape_(shape), data_(shape.size(), fill) {
    require(shape.channels >= 1 && shape.height >= 1 && shape.width >= 1,
            "image shape must be positive, got " + to_string(shape));
  }
  Image(Shape shape, std::vector<Real> data) : shape_(shape), data_(std::move(data)) {
    require(data_.size() == shape.size(), "image data size does not match shape " + to_string(shape));
  }

  const Shape& shape() const { return shape_; }
  int channels() const { return shape_.channels; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  std::size_t size() const { return data_.size(); }

  Real& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  Real at(int c, int y, int x) const { return data_[index(c, y, x)]; }
  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  std::span<Real> values() { return data_; }
  std::span<const Real> values() const { return data_; }
  std::vector<Real>& storage() { return data_; }
  const std::vector<Real>& storage() const { return data_; }

  template <typename Other>
  Image<Other> cast() const {
    Image<Other> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<Other>(data_[i]);
    return out;
  }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (std::size_t(c) * shape_.height + std::size_t(y)) * shape_.width + std::size_t(x);
  }

  Shape shape_;
  std::vector<Real> data_;
};

template <typename Real>
void require_same_shape(const Image<Real>& a, const Image<Real>& b, const char* what) {
  require(a.shape() == b.shape(), std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                                      to_string(b.shape()));
}

template <typename Real>
bool all_finite(const Image<Real>& image) {
  return std::all_of(image.values().begin(), image.values().end(), [](Real v) { return std::isfinite(v); });
}

/// Seeded random stream. Derived streams are keyed by (root seed, stream id)
/// so per-scene or per-sample work is reproducible regardless of scheduling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  static Rng derive(std::uint64_t root, std::uint64_t stream) {
    std::seed_seq seq{std::uint32_t(root), std::uint32_t(root >> 32), std::uint32_t(stream),
                      std::uint32_t(stream >> 32), 0x9e3779b9u};
    Rng rng;
    rng.engine_.seed(seq);
    return rng;
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  bool bernoulli(double p) { return uniform() < p; }

  // Uniform over the inclusive range [lo, hi].
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  std::uint64_t next_seed() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

  template <typename Real>
  Image<Real> normal_image(Shape shape) {
    Image<Real> out(shape);
    for (auto& v : out.values()) v = static_cast<Real>(normal());
    return out;
  }

 private:
  std::mt19937_64 engine_;
};

/// Worker count: PATHDIFF_THREADS if set, otherwise the hardware concurrency.
inline int default_thread_count() {
  if (const char* env = std::getenv("PATHDIFF_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(i) for i in [0, n) across `threads` workers.
///
/// Work items are independent and write to disjoint outputs; callers reduce
/// results in index order afterwards, so outputs never depend on `threads`.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body) {
  std::size_t workers = std::min<std::size_t>(std::max(threads, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  pool.clear();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace pathdiff
