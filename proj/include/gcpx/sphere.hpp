#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <string>

#include "errors.hpp"
#include "random.hpp"

namespace gcpx {

using Vector = Eigen::VectorXd;
// Row-major so that each row (a point, a proxy, an instance) is contiguous
// and matches the on-disk layout.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kUnitNormTolerance = 1e-9;

// A point on S^{d-1}, d >= 2.
class UnitVector {
 public:
  // Checked: throws DomainError unless |v| is 1 within kUnitNormTolerance.
  explicit UnitVector(Vector coords) : coords_(std::move(coords)) {
    if (coords_.size() < 2) {
      throw DomainError("unit vector needs dimension >= 2, got " +
                        std::to_string(coords_.size()));
    }
    const double norm = coords_.norm();
    if (!std::isfinite(norm) || std::abs(norm - 1.0) > kUnitNormTolerance) {
      throw DomainError("vector norm " + std::to_string(norm) + " is not 1");
    }
  }

  static UnitVector normalized(const Vector& v) {
    const double norm = v.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw DomainError("cannot normalize a zero or non-finite vector");
    }
    return UnitVector(Vector(v / norm));
  }

  // e_axis in dimension d.
  static UnitVector basis(Eigen::Index d, Eigen::Index axis) {
    Vector v = Vector::Zero(d);
    v(axis) = 1.0;
    return UnitVector(std::move(v));
  }

  static UnitVector random(Eigen::Index d, CounterRng& rng) {
    std::normal_distribution<double> normal;
    Vector v(d);
    double norm = 0.0;
    do {
      for (Eigen::Index i = 0; i < d; ++i) v(i) = normal(rng);
      norm = v.norm();
    } while (norm < 1e-12);
    return UnitVector(Vector(v / norm));
  }

  const Vector& coords() const { return coords_; }
  Eigen::Index dim() const { return coords_.size(); }
  double operator()(Eigen::Index i) const { return coords_(i); }
  double dot(const UnitVector& other) const { return coords_.dot(other.coords_); }

  UnitVector operator-() const { return UnitVector(Vector(-coords_)); }

 private:
  Vector coords_;
};

inline void require_same_dim(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": dimension mismatch (" + std::to_string(a) +
                     " vs " + std::to_string(b) + ")");
  }
}

// Normalizes every row in place; rows with zero norm are left at zero and
// reported through the return value (count of such rows).
inline Eigen::Index normalize_rows(Matrix& m) {
  Eigen::Index zero_rows = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double norm = m.row(i).norm();
    if (norm > 0.0) {
      m.row(i) /= norm;
    } else {
      ++zero_rows;
    }
  }
  return zero_rows;
}

}  // namespace gcpx
