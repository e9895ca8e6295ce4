#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tempofuse/errors.hpp"

namespace tempofuse {

/// Dense row-major H x W x C raster. Channel index is the fastest-varying.
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(int height, int width, int channels = 1, T fill = T{})
        : height_(height), width_(width), channels_(channels),
          data_(static_cast<std::size_t>(height) * width * channels, fill) {}

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    bool inside(int row, int col) const {
        return row >= 0 && row < height_ && col >= 0 && col < width_;
    }

    T& operator()(int row, int col, int ch = 0) { return data_[index(row, col, ch)]; }
    const T& operator()(int row, int col, int ch = 0) const {
        return data_[index(row, col, ch)];
    }

    std::span<T> pixel(int row, int col) {
        return {data_.data() + index(row, col, 0), static_cast<std::size_t>(channels_)};
    }
    std::span<const T> pixel(int row, int col) const {
        return {data_.data() + index(row, col, 0), static_cast<std::size_t>(channels_)};
    }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool same_shape(int height, int width) const {
        return height_ == height && width_ == width;
    }
    template <typename U>
    bool same_shape(const Grid<U>& other) const {
        return height_ == other.height() && width_ == other.width();
    }

    /// Copy of one channel as a single-channel grid.
    Grid channel(int ch) const {
        Grid out(height_, width_, 1);
        for (int r = 0; r < height_; ++r)
            for (int c = 0; c < width_; ++c) out(r, c) = (*this)(r, c, ch);
        return out;
    }

    bool operator==(const Grid& other) const = default;

private:
    std::size_t index(int row, int col, int ch) const {
        assert(row >= 0 && row < height_ && col >= 0 && col < width_);
        assert(ch >= 0 && ch < channels_);
        return (static_cast<std::size_t>(row) * width_ + col) * channels_ + ch;
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<T> data_;
};

using Map = Grid<double>;
using Mask = Grid<std::uint8_t>;
using LabelMap = Grid<std::int32_t>;

template <typename A, typename B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const char* what) {
    if (!a.same_shape(b))
        throw DimensionMismatch(std::string(what) + ": " + std::to_string(a.height()) + "x" +
                                std::to_string(a.width()) + " vs " +
                                std::to_string(b.height()) + "x" + std::to_string(b.width()));
}

/// Bilinear sample of channel `ch` at sub-pixel (x = column, y = row).
/// Returns false when any of the four taps falls outside the grid.
template <typename T>
bool sample_bilinear(const Grid<T>& g, double x, double y, int ch, double& out) {
    if (!(x >= 0.0 && y >= 0.0 && x <= g.width() - 1 && y <= g.height() - 1)) return false;
    int x0 = static_cast<int>(x);
    int y0 = static_cast<int>(y);
    const int x1 = x0 + 1 < g.width() ? x0 + 1 : x0;
    const int y1 = y0 + 1 < g.height() ? y0 + 1 : y0;
    const double ax = x - x0;
    const double ay = y - y0;
    const double top = (1 - ax) * g(y0, x0, ch) + ax * g(y0, x1, ch);
    const double bot = (1 - ax) * g(y1, x0, ch) + ax * g(y1, x1, ch);
    out = (1 - ay) * top + ay * bot;
    return true;
}

/// True when all taps a bilinear sample at (x, y) would touch are nonzero.
inline bool mask_bilinear_all(const Mask& m, double x, double y) {
    if (!(x >= 0.0 && y >= 0.0 && x <= m.width() - 1 && y <= m.height() - 1)) return false;
    const int x0 = static_cast<int>(x);
    const int y0 = static_cast<int>(y);
    const int x1 = x0 + 1 < m.width() ? x0 + 1 : x0;
    const int y1 = y0 + 1 < m.height() ? y0 + 1 : y0;
    const bool needx1 = x > x0;
    const bool needy1 = y > y0;
    if (!m(y0, x0)) return false;
    if (needx1 && !m(y0, x1)) return false;
    if (needy1 && !m(y1, x0)) return false;
    if (needx1 && needy1 && !m(y1, x1)) return false;
    return true;
}

}  // namespace tempofuse
