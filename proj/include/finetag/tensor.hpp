#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "finetag/errors.hpp"

namespace finetag {

// Dense C×H×W tensor, flat c-major storage (index = (c*H + h)*W + w).
// This is the in-memory form of a backbone feature map and of the projected
// map; the same layout is used on disk.
template <typename S>
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::uint32_t c, std::uint32_t h, std::uint32_t w, S fill = S{})
      : c_(c), h_(h), w_(w), data_(std::size_t(c) * h * w, fill) {}

  std::uint32_t channels() const { return c_; }
  std::uint32_t height() const { return h_; }
  std::uint32_t width() const { return w_; }
  std::size_t size() const { return data_.size(); }
  std::uint32_t locations() const { return h_ * w_; }

  S& at(std::uint32_t c, std::uint32_t h, std::uint32_t w) {
    return data_[(std::size_t(c) * h_ + h) * w_ + w];
  }
  S at(std::uint32_t c, std::uint32_t h, std::uint32_t w) const {
    return data_[(std::size_t(c) * h_ + h) * w_ + w];
  }

  std::span<S> data() { return data_; }
  std::span<const S> data() const { return data_; }

  bool same_shape(const Tensor3& other) const {
    return c_ == other.c_ && h_ == other.h_ && w_ == other.w_;
  }

  bool all_finite() const {
    for (S v : data_)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  template <typename T>
  Tensor3<T> cast() const {
    Tensor3<T> out(c_, h_, w_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = T(data_[i]);
    return out;
  }

 private:
  std::uint32_t c_ = 0, h_ = 0, w_ = 0;
  std::vector<S> data_;
};

// Minimal dense row-major matrix; enough for the parameter tensors.
template <typename S>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::uint32_t rows, std::uint32_t cols, S fill = S{})
      : rows_(rows), cols_(cols), data_(std::size_t(rows) * cols, fill) {}

  std::uint32_t rows() const { return rows_; }
  std::uint32_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  S& operator()(std::uint32_t r, std::uint32_t c) { return data_[std::size_t(r) * cols_ + c]; }
  S operator()(std::uint32_t r, std::uint32_t c) const { return data_[std::size_t(r) * cols_ + c]; }

  std::span<S> data() { return data_; }
  std::span<const S> data() const { return data_; }

  std::span<S> row(std::uint32_t r) {
    return std::span<S>(data_).subspan(std::size_t(r) * cols_, cols_);
  }
  std::span<const S> row(std::uint32_t r) const {
    return std::span<const S>(data_).subspan(std::size_t(r) * cols_, cols_);
  }

  void fill(S v) { data_.assign(data_.size(), v); }

  template <typename T>
  Matrix<T> cast() const {
    Matrix<T> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = T(data_[i]);
    return out;
  }

 private:
  std::uint32_t rows_ = 0, cols_ = 0;
  std::vector<S> data_;
};

template <typename S>
bool all_finite(std::span<const S> values) {
  for (S v : values)
    if (!std::isfinite(double(v))) return false;
  return true;
}

}  // namespace finetag
