#pragma once

#include <cstddef>
#include <vector>

namespace endovid {

/// RGB frame stack laid out T x 3 x H x W, values in [0, 1].
struct Frames {
    static constexpr std::size_t channels = 3;

    std::size_t frames = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> data;

    Frames() = default;
    Frames(std::size_t t, std::size_t h, std::size_t w)
        : frames(t), height(h), width(w), data(t * channels * h * w, 0.0f) {}

    std::size_t frame_size() const { return channels * height * width; }
    std::size_t index(std::size_t t, std::size_t c, std::size_t y, std::size_t x) const {
        return ((t * channels + c) * height + y) * width + x;
    }
    float& at(std::size_t t, std::size_t c, std::size_t y, std::size_t x) {
        return data[index(t, c, y, x)];
    }
    float at(std::size_t t, std::size_t c, std::size_t y, std::size_t x) const {
        return data[index(t, c, y, x)];
    }
    bool empty() const { return frames == 0; }

    bool operator==(const Frames&) const = default;
};

}  // namespace endovid
