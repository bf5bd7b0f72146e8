#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <new>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace chromaprop {

// Vectorized kernels peel differently depending on where a buffer starts, so
// every numeric buffer starts on a 64-byte boundary to keep results
// reproducible bit for bit from run to run.
inline constexpr std::size_t kBufferAlignment = 64;

template <class T>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kBufferAlignment}));
  }
  void deallocate(T* p, std::size_t) { ::operator delete(p, std::align_val_t{kBufferAlignment}); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Thrown whenever two arrays that must agree in shape do not.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  std::size_t numel() const { return plane() * channels; }
  bool same_spatial(const Shape& o) const { return height == o.height && width == o.width; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << s.channels << "x" << s.height << "x" << s.width;
  return os.str();
}

/// Dense channel-major (C x H x W) array. The unit every image, feature
/// and flow in the library is stored in.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(int channels, int height, int width, T fill = T{})
      : shape_{channels, height, width}, data_(checked(shape_).numel(), fill) {}
  explicit Tensor(Shape s, T fill = T{}) : Tensor(s.channels, s.height, s.width, fill) {}

  const Shape& shape() const { return shape_; }
  int channels() const { return shape_.channels; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  std::size_t plane() const { return shape_.plane(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int c, int y, int x) {
    assert(c >= 0 && c < channels() && y >= 0 && y < height() && x >= 0 && x < width());
    return data_[(static_cast<std::size_t>(c) * height() + y) * width() + x];
  }
  const T& operator()(int c, int y, int x) const {
    assert(c >= 0 && c < channels() && y >= 0 && y < height() && x >= 0 && x < width());
    return data_[(static_cast<std::size_t>(c) * height() + y) * width() + x];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  std::span<T> channel(int c) { return std::span<T>(data_).subspan(c * plane(), plane()); }
  std::span<const T> channel(int c) const {
    return std::span<const T>(data_).subspan(c * plane(), plane());
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o);
  Tensor& operator-=(const Tensor& o);
  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static const Shape& checked(const Shape& s) {
    if (s.channels < 0 || s.height < 0 || s.width < 0) throw DimensionError("negative tensor dimension");
    return s;
  }

  Shape shape_{};
  AlignedVector<T> data_;
};

inline void require_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b))
    throw DimensionError(std::string(what) + ": shape " + to_string(a) + " vs " + to_string(b));
}

inline void require_spatial(const Shape& a, const Shape& b, const char* what) {
  if (!a.same_spatial(b))
    throw DimensionError(std::string(what) + ": spatial size " + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                         std::to_string(b.width));
}

template <class T>
Tensor<T>& Tensor<T>::operator+=(const Tensor& o) {
  require_shape(shape_, o.shape_, "tensor add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

template <class T>
Tensor<T>& Tensor<T>::operator-=(const Tensor& o) {
  require_shape(shape_, o.shape_, "tensor subtract");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

template <class T>
Tensor<T> operator+(Tensor<T> a, const Tensor<T>& b) {
  a += b;
  return a;
}

template <class T>
Tensor<T> operator-(Tensor<T> a, const Tensor<T>& b) {
  a -= b;
  return a;
}

/// Stack tensors of equal spatial size along the channel axis.
template <class T>
Tensor<T> concat_channels(std::initializer_list<const Tensor<T>*> parts) {
  if (parts.size() == 0) return {};
  const Shape first = (*parts.begin())->shape();
  int total = 0;
  for (const auto* p : parts) {
    require_spatial(first, p->shape(), "concat_channels");
    total += p->channels();
  }
  Tensor<T> out(total, first.height, first.width);
  T* dst = out.data();
  for (const auto* p : parts) dst = std::copy(p->data(), p->data() + p->size(), dst);
  return out;
}

/// Copy channels [begin, begin + count) into a new tensor.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& t, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > t.channels())
    throw DimensionError("slice_channels: range out of bounds");
  Tensor<T> out(count, t.height(), t.width());
  const T* src = t.data() + static_cast<std::size_t>(begin) * t.plane();
  std::copy(src, src + out.size(), out.data());
  return out;
}

/// Crop a spatial window, all channels.
template <class T>
Tensor<T> crop(const Tensor<T>& t, int y0, int x0, int h, int w) {
  if (y0 < 0 || x0 < 0 || h < 0 || w < 0 || y0 + h > t.height() || x0 + w > t.width())
    throw DimensionError("crop: window outside tensor");
  Tensor<T> out(t.channels(), h, w);
  for (int c = 0; c < t.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out(c, y, x) = t(c, y0 + y, x0 + x);
  return out;
}

template <class T>
T sum(const Tensor<T>& t) {
  T s{};
  for (const T& v : t.values()) s += v;
  return s;
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(a.shape(), b.shape(), "max_abs_diff");
  T m{};
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max<T>(m, a[i] > b[i] ? a[i] - b[i] : b[i] - a[i]);
  return m;
}

}  // namespace chromaprop
