#pragma once

#include <stdexcept>
#include <vector>

namespace sar {

/// Height x width of a token grid; N = height * width tokens.
struct GridShape {
    int height = 0;
    int width = 0;

    int size() const { return height * width; }

    void validate() const {
        if (height < 1 || width < 1) {
            throw std::invalid_argument("GridShape: height and width must be >= 1");
        }
    }

    bool operator==(const GridShape&) const = default;
};

/// A grid of discrete token ids plus its condition label.
struct TokenGrid {
    GridShape shape;
    std::vector<int> tokens;  // row-major, length shape.size()
    int class_id = 0;
};

}  // namespace sar
