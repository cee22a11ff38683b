#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "doacal/linalg.hpp"

namespace doacal {

using Rng = std::mt19937_64;

/// Order-sensitive hash of a seed tuple (splitmix64 chain). Used to derive
/// independent streams per (cell, trial) without any shared generator.
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) noexcept;

/// Uniform on [0, 1) from the top 53 bits of one draw. Used instead of the
/// std distributions, whose output is implementation defined.
double uniform01(Rng& rng) noexcept;

/// Standard circular complex normals: real and imaginary parts i.i.d. N(0, 1/2).
CMat complex_normal(Rng& rng, Index rows, Index cols);

/// Entries amplitude * exp(j*phi) with phi uniform on [0, 2*pi).
CMat random_phase(Rng& rng, Index rows, Index cols, double amplitude);

}  // namespace doacal
