//---------------------------------------------------------------------------//
//! \file rng.hpp
//! Counter-based per-particle random streams (Philox4x32-10).
//---------------------------------------------------------------------------//
#pragma once

#include <array>
#include <cstdint>

#include "core.hpp"

namespace rtegrad
{
//---------------------------------------------------------------------------//
/*!
 * Philox4x32 with 10 rounds (Salmon et al., SC'11).
 *
 * Pure function of (counter, key); no internal state.
 */
struct Philox4x32
{
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static constexpr std::uint32_t mul0 = 0xD2511F53u;
    static constexpr std::uint32_t mul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t weyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t weyl1 = 0xBB67AE85u;

    static constexpr Counter round(Counter c, Key k)
    {
        std::uint64_t const p0 = std::uint64_t{mul0} * c[0];
        std::uint64_t const p1 = std::uint64_t{mul1} * c[2];
        auto const hi0 = static_cast<std::uint32_t>(p0 >> 32);
        auto const lo0 = static_cast<std::uint32_t>(p0);
        auto const hi1 = static_cast<std::uint32_t>(p1 >> 32);
        auto const lo1 = static_cast<std::uint32_t>(p1);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }

    static constexpr Counter apply(Counter c, Key k)
    {
        for (int r = 0; r < 10; ++r)
        {
            if (r > 0)
            {
                k[0] += weyl0;
                k[1] += weyl1;
            }
            c = round(c, k);
        }
        return c;
    }
};

//! Root of all randomness in a run.
struct MasterSeed
{
    std::uint64_t value{0};
    bool operator==(MasterSeed const&) const = default;
};

//---------------------------------------------------------------------------//
/*!
 * Replayable random stream keyed by (seed, particle index).
 *
 * Draw k of particle n is a fixed function of (seed, n, k), so a stream can be
 * re-derived and replayed from the start on any thread.
 */
class ParticleStream
{
  public:
    ParticleStream() = default;
    ParticleStream(MasterSeed seed, std::uint64_t particle)
        : key_{static_cast<std::uint32_t>(seed.value),
               static_cast<std::uint32_t>(seed.value >> 32)}
        , particle_(particle)
    {
    }

    //! Next 64 random bits.
    std::uint64_t next_u64()
    {
        if (buffered_ == 0)
        {
            Philox4x32::Counter ctr{static_cast<std::uint32_t>(block_),
                                    static_cast<std::uint32_t>(block_ >> 32),
                                    static_cast<std::uint32_t>(particle_),
                                    static_cast<std::uint32_t>(particle_ >> 32)};
            auto const out = Philox4x32::apply(ctr, key_);
            buffer_[0] = (std::uint64_t{out[1]} << 32) | out[0];
            buffer_[1] = (std::uint64_t{out[3]} << 32) | out[2];
            ++block_;
            buffered_ = 2;
        }
        return buffer_[2 - buffered_--];
    }

    //! Uniform double in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(this->next_u64() >> 11) * 0x1.0p-53; }

    std::uint64_t particle() const { return particle_; }

  private:
    Philox4x32::Key key_{};
    std::uint64_t particle_{0};
    std::uint64_t block_{0};
    std::array<std::uint64_t, 2> buffer_{};
    int buffered_{0};
};

inline ParticleStream derive_stream(MasterSeed seed, std::uint64_t particle)
{
    return ParticleStream(seed, particle);
}

template<class Stream>
double uniform01(Stream& stream)
{
    return stream.uniform01();
}

//! Draw a velocity uniformly on Omega.
template<int D, class Stream>
Velocity<D> uniform_velocity_sample(Stream& stream)
{
    return Velocity<D>::from_uniform(stream.uniform01());
}

//---------------------------------------------------------------------------//
}  // namespace rtegrad
