#pragma once

#include <cmath>

namespace fvpy {

// Image-plane point or displacement in pixels: x right, y down. Pixel (i, j)
// covers [i, i+1) x [j, j+1), so its center is (i + 0.5, j + 0.5).
struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Point2 operator*(double s, Point2 p) { return {s * p.x, s * p.y}; }
  friend bool operator==(Point2 a, Point2 b) = default;
};

inline double norm(Point2 p) { return std::hypot(p.x, p.y); }

}  // namespace fvpy
