#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace vircov {

inline constexpr int kMonths = 12;

/// Month x year x virus table. Storage is year-major, then month, then virus,
/// so the slice for one year is the month-major vector vec(phi_.t.).
template <typename T>
class Cube {
 public:
  Cube() = default;
  Cube(int years, int viruses, T fill = T{})
      : years_(years), viruses_(viruses),
        data_(static_cast<std::size_t>(kMonths) * years * viruses, fill) {
    if (years <= 0 || viruses <= 0) throw std::invalid_argument("Cube: dimensions must be positive");
  }

  int months() const { return kMonths; }
  int years() const { return years_; }
  int viruses() const { return viruses_; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(int m, int t, int v) const {
    return (static_cast<std::size_t>(t) * kMonths + m) * viruses_ + v;
  }

  T& operator()(int m, int t, int v) { return data_[index(m, t, v)]; }
  const T& operator()(int m, int t, int v) const { return data_[index(m, t, v)]; }

  std::span<T> year_slice(int t) {
    return {data_.data() + static_cast<std::size_t>(t) * kMonths * viruses_,
            static_cast<std::size_t>(kMonths) * viruses_};
  }
  std::span<const T> year_slice(int t) const {
    return {data_.data() + static_cast<std::size_t>(t) * kMonths * viruses_,
            static_cast<std::size_t>(kMonths) * viruses_};
  }

  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  /// Keeps years [0, k).
  Cube leading_years(int k) const {
    if (k <= 0 || k > years_) throw std::out_of_range("Cube::leading_years");
    Cube out(k, viruses_);
    std::copy(data_.begin(), data_.begin() + static_cast<std::ptrdiff_t>(out.size()),
              out.data_.begin());
    return out;
  }

  bool operator==(const Cube&) const = default;

 private:
  int years_ = 0;
  int viruses_ = 0;
  std::vector<T> data_;
};

}  // namespace vircov
