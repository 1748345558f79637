// One 3x3x32 binary convolution two ways: XNOR + popcount on packed bits, and
// an ordinary float convolution on the unpacked +-1 values.

#include <iostream>
#include <random>

#include "bireal/bireal.hpp"

using namespace bireal;

int main() {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> u(-1.f, 1.f);
    Tensor<float> a({1, 32, 14, 14}), w({8, 32, 3, 3});
    for (auto& v : a.data()) v = u(rng);
    for (auto& v : w.data()) v = u(rng);

    const ConvGeometry g{32, 8, 3, 3, 1, 1};
    const auto ab = sign_pack(a), wb = sign_pack(w);
    const auto fast = binconv2d(ab, wb, g);
    const auto slow = float_conv2d(unpack<float>(ab), unpack<float>(wb), g, -1.f);

    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < fast.numel(); ++i) mismatches += fast.data()[i] != slow.data()[i];
    std::cout << "outputs " << fast.numel() << ", mismatches " << mismatches << "\n";
    std::cout << "first row:";
    for (std::size_t x = 0; x < 14; ++x) std::cout << ' ' << fast.at(0, 0, 0, x);
    std::cout << "\nvalues lie in [-288, 288] and are even: 289 possible levels\n";
    return mismatches == 0 ? 0 : 1;
}
