#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

namespace limforge {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    bool operator==(const Vec2&) const = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

/// Signed area of a simple polygon (positive for counter-clockwise order).
inline double signed_area(const std::vector<Vec2>& poly) {
    double s = 0.0;
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2& a = poly[i];
        const Vec2& b = poly[(i + 1) % n];
        s += cross(a, b);
    }
    return 0.5 * s;
}

inline double polygon_area(const std::vector<Vec2>& poly) {
    return std::abs(signed_area(poly));
}

/// Convex hull, counter-clockwise, no collinear points on the hull
/// (Andrew's monotone chain). Degenerate inputs return fewer than 3 points.
inline std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
    std::sort(pts.begin(), pts.end(), [](Vec2 a, Vec2 b) {
        return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    const std::size_t n = pts.size();
    if (n < 3) return pts;

    std::vector<Vec2> hull(2 * n);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {  // lower
        while (k >= 2 && cross(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0) --k;
        hull[k++] = pts[i];
    }
    for (std::size_t i = n - 1, t = k + 1; i-- > 0;) {  // upper
        while (k >= t && cross(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

/// Rectangle described by the direction of one side plus extents.
struct MinAreaRect {
    Vec2 axis;          // unit vector of the "width" side
    double side_a = 0;  // extent along axis
    double side_b = 0;  // extent along the perpendicular
    Vec2 corner;        // corner such that the rect spans corner + s*axis + t*perp
    double area() const { return side_a * side_b; }

    std::array<Vec2, 4> corners() const {
        Vec2 perp{-axis.y, axis.x};
        return {corner,
                corner + axis * side_a,
                corner + axis * side_a + perp * side_b,
                corner + perp * side_b};
    }
};

namespace detail {

/// Extents of a point set projected on (axis, perp), with the min corner.
inline MinAreaRect rect_for_axis(const std::vector<Vec2>& pts, Vec2 axis) {
    Vec2 perp{-axis.y, axis.x};
    double lo_a = dot(pts[0], axis), hi_a = lo_a;
    double lo_b = dot(pts[0], perp), hi_b = lo_b;
    for (std::size_t i = 1; i < pts.size(); ++i) {
        double a = dot(pts[i], axis);
        double b = dot(pts[i], perp);
        lo_a = std::min(lo_a, a);
        hi_a = std::max(hi_a, a);
        lo_b = std::min(lo_b, b);
        hi_b = std::max(hi_b, b);
    }
    MinAreaRect r;
    r.axis = axis;
    r.side_a = hi_a - lo_a;
    r.side_b = hi_b - lo_b;
    r.corner = axis * lo_a + perp * lo_b;
    return r;
}

}  // namespace detail

/// Minimum-area enclosing rectangle of a point set (rotating calipers over
/// the convex hull: one side of the optimum is collinear with a hull edge).
/// Collinear input collapses to side_b == 0.
inline MinAreaRect min_area_rect(const std::vector<Vec2>& pts) {
    std::vector<Vec2> hull = convex_hull(pts);
    if (hull.size() < 2) {
        MinAreaRect r;
        r.axis = {1, 0};
        r.corner = hull.empty() ? Vec2{} : hull[0];
        return r;
    }
    if (hull.size() == 2) {
        Vec2 d = hull[1] - hull[0];
        double len = norm(d);
        MinAreaRect r;
        r.axis = len > 0 ? d * (1.0 / len) : Vec2{1, 0};
        r.side_a = len;
        r.side_b = 0;
        r.corner = hull[0];
        return r;
    }

    const std::size_t n = hull.size();
    // Caliper indices: farthest along edge dir, its perpendicular, and the
    // backwards direction. They only advance as the edge direction rotates.
    auto next = [n](std::size_t i) { return (i + 1) % n; };
    std::size_t right = 0, top = 0, left = 0;

    MinAreaRect best;
    bool have_best = false;
    for (std::size_t i = 0; i < n; ++i) {
        Vec2 e = hull[next(i)] - hull[i];
        double len = norm(e);
        if (len <= 0) continue;
        Vec2 dir = e * (1.0 / len);
        Vec2 perp{-dir.y, dir.x};

        if (i == 0) {
            // Initialize calipers by full scan once.
            for (std::size_t j = 0; j < n; ++j) {
                if (dot(hull[j], dir) > dot(hull[right], dir)) right = j;
                if (dot(hull[j], perp) > dot(hull[top], perp)) top = j;
                if (dot(hull[j], dir) < dot(hull[left], dir)) left = j;
            }
        } else {
            while (dot(hull[next(right)], dir) >= dot(hull[right], dir)) right = next(right);
            while (dot(hull[next(top)], perp) >= dot(hull[top], perp)) top = next(top);
            while (dot(hull[next(left)], dir) <= dot(hull[left], dir)) left = next(left);
        }

        double width = dot(hull[right], dir) - dot(hull[left], dir);
        double height = dot(hull[top], perp) - dot(hull[i], perp);
        if (!have_best || width * height < best.area()) {
            MinAreaRect r;
            r.axis = dir;
            r.side_a = width;
            r.side_b = height;
            r.corner = dir * dot(hull[left], dir) + perp * dot(hull[i], perp);
            best = r;
            have_best = true;
        }
    }
    return best;
}

/// Sutherland-Hodgman clip of a polygon against the axis-aligned rectangle
/// [x0,x1] x [y0,y1]. Convex input stays convex. May return < 3 vertices
/// when the polygon lies outside the window.
inline std::vector<Vec2> clip_to_rect(const std::vector<Vec2>& poly,
                                      double x0, double y0, double x1, double y1) {
    auto clip_edge = [](const std::vector<Vec2>& in, auto inside, auto intersect) {
        std::vector<Vec2> out;
        out.reserve(in.size() + 4);
        const std::size_t n = in.size();
        for (std::size_t i = 0; i < n; ++i) {
            const Vec2& cur = in[i];
            const Vec2& prev = in[(i + n - 1) % n];
            bool cur_in = inside(cur);
            bool prev_in = inside(prev);
            if (cur_in) {
                if (!prev_in) out.push_back(intersect(prev, cur));
                out.push_back(cur);
            } else if (prev_in) {
                out.push_back(intersect(prev, cur));
            }
        }
        return out;
    };

    auto lerp_at_x = [](Vec2 a, Vec2 b, double x) {
        double t = (x - a.x) / (b.x - a.x);
        return Vec2{x, a.y + t * (b.y - a.y)};
    };
    auto lerp_at_y = [](Vec2 a, Vec2 b, double y) {
        double t = (y - a.y) / (b.y - a.y);
        return Vec2{a.x + t * (b.x - a.x), y};
    };

    std::vector<Vec2> p = poly;
    if (p.empty()) return p;
    p = clip_edge(p, [&](Vec2 v) { return v.x >= x0; },
                  [&](Vec2 a, Vec2 b) { return lerp_at_x(a, b, x0); });
    if (p.empty()) return p;
    p = clip_edge(p, [&](Vec2 v) { return v.x <= x1; },
                  [&](Vec2 a, Vec2 b) { return lerp_at_x(a, b, x1); });
    if (p.empty()) return p;
    p = clip_edge(p, [&](Vec2 v) { return v.y >= y0; },
                  [&](Vec2 a, Vec2 b) { return lerp_at_y(a, b, y0); });
    if (p.empty()) return p;
    p = clip_edge(p, [&](Vec2 v) { return v.y <= y1; },
                  [&](Vec2 a, Vec2 b) { return lerp_at_y(a, b, y1); });
    return p;
}

}  // namespace limforge
