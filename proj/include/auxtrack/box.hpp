#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace auxtrack {

// Axis-aligned box, top-left corner plus size. Units are whatever the caller
// uses (pixels or normalized coordinates).
struct Box {
  double x = 0, y = 0, w = 0, h = 0;

  double x2() const { return x + w; }
  double y2() const { return y + h; }
  // Corner-based on purpose: intersection/enclosure widths are corner
  // differences, and using the same expression here makes IoU of a box with
  // itself exactly 1 (and GIoU loss exactly 0).
  double area() const { return (x2() - x) * (y2() - y); }
  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  bool empty() const { return w <= 0.0 || h <= 0.0; }

  static Box from_corners(double x1, double y1, double x2, double y2) {
    return {x1, y1, x2 - x1, y2 - y1};
  }

  Box scaled(double s) const { return {x * s, y * s, w * s, h * s}; }

  Box clipped(double width, double height) const {
    double nx1 = std::clamp(x, 0.0, width);
    double ny1 = std::clamp(y, 0.0, height);
    double nx2 = std::clamp(x2(), 0.0, width);
    double ny2 = std::clamp(y2(), 0.0, height);
    return from_corners(nx1, ny1, nx2, ny2);
  }
};

inline double intersection_area(const Box& a, const Box& b) {
  double iw = std::min(a.x2(), b.x2()) - std::max(a.x, b.x);
  double ih = std::min(a.y2(), b.y2()) - std::max(a.y, b.y);
  return std::max(iw, 0.0) * std::max(ih, 0.0);
}

inline double iou(const Box& a, const Box& b) {
  double inter = intersection_area(a, b);
  double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Generalized IoU: IoU minus the fraction of the enclosing box not covered by
// the union. In [-1, 1].
inline double giou(const Box& a, const Box& b) {
  if (a.empty() && b.empty())
    throw std::invalid_argument("giou: both boxes are empty");
  double inter = intersection_area(a, b);
  double uni = a.area() + b.area() - inter;
  double ex1 = std::min(a.x, b.x), ey1 = std::min(a.y, b.y);
  double ex2 = std::max(a.x2(), b.x2()), ey2 = std::max(a.y2(), b.y2());
  double enclose = (ex2 - ex1) * (ey2 - ey1);
  double v = uni > 0.0 ? inter / uni : 0.0;
  if (enclose > 0.0) v -= (enclose - uni) / enclose;
  return v;
}

inline double center_distance(const Box& a, const Box& b) {
  double dx = a.cx() - b.cx();
  double dy = a.cy() - b.cy();
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace auxtrack
