#pragma once

#include <array>
#include <cmath>

namespace kdrf {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    const double n = norm();
    return {x / n, y / n, z / n};
  }
};

// Row-major 4x4 homogeneous transform (camera-to-world).
struct Mat4 {
  std::array<double, 16> m{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

  double operator()(int r, int c) const { return m[static_cast<std::size_t>(r * 4 + c)]; }
  double& operator()(int r, int c) { return m[static_cast<std::size_t>(r * 4 + c)]; }

  Vec3 mul_point(const Vec3& p) const {
    return {(*this)(0, 0) * p.x + (*this)(0, 1) * p.y + (*this)(0, 2) * p.z + (*this)(0, 3),
            (*this)(1, 0) * p.x + (*this)(1, 1) * p.y + (*this)(1, 2) * p.z + (*this)(1, 3),
            (*this)(2, 0) * p.x + (*this)(2, 1) * p.y + (*this)(2, 2) * p.z + (*this)(2, 3)};
  }
  Vec3 mul_dir(const Vec3& d) const {
    return {(*this)(0, 0) * d.x + (*this)(0, 1) * d.y + (*this)(0, 2) * d.z,
            (*this)(1, 0) * d.x + (*this)(1, 1) * d.y + (*this)(1, 2) * d.z,
            (*this)(2, 0) * d.x + (*this)(2, 1) * d.y + (*this)(2, 2) * d.z};
  }
  Vec3 translation() const { return {(*this)(0, 3), (*this)(1, 3), (*this)(2, 3)}; }

  double det3() const {
    return (*this)(0, 0) * ((*this)(1, 1) * (*this)(2, 2) - (*this)(1, 2) * (*this)(2, 1)) -
           (*this)(0, 1) * ((*this)(1, 0) * (*this)(2, 2) - (*this)(1, 2) * (*this)(2, 0)) +
           (*this)(0, 2) * ((*this)(1, 0) * (*this)(2, 1) - (*this)(1, 1) * (*this)(2, 0));
  }
};

// Camera-to-world for an eye looking at a target, -z forward, +y up.
inline Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& world_up) {
  const Vec3 back = (eye - target).normalized();      // camera +z
  const Vec3 right = world_up.cross(back).normalized();
  const Vec3 up = back.cross(right);
  Mat4 out;
  out(0, 0) = right.x; out(0, 1) = up.x; out(0, 2) = back.x; out(0, 3) = eye.x;
  out(1, 0) = right.y; out(1, 1) = up.y; out(1, 2) = back.y; out(1, 3) = eye.y;
  out(2, 0) = right.z; out(2, 1) = up.z; out(2, 2) = back.z; out(2, 3) = eye.z;
  return out;
}

}  // namespace kdrf
