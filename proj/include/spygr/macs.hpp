#pragma once

#include <cstdint>

namespace spygr {

/// Accumulates multiply-accumulate tallies from executed kernels. One
/// counter is active per thread at a time (see MacScope); kernels tally into
/// it when active and cost nothing when none is installed.
///
/// Counting convention (the analytic model in costmodel.hpp mirrors it):
///   matmul [p x q][q x r]        -> p*q*r
///   conv1x1                      -> N*H*W*C_in*C_out
///   conv3x3                      -> out_elems*C_in*9
///   scale_rows(A[r x c], v[r])   -> r*c
///   elementwise mul/add/sub      -> element count
///   bilinear upsample            -> 8 * (H_out*W_out), channel-agnostic
///   max pooling                  -> H_in*W_in comparisons, channel-agnostic
///   activations, pooling means, rsqrt, reshapes, transposes -> 0
struct MacCounter {
    std::uint64_t macs = 0;
};

namespace detail {
inline MacCounter*& active_mac_counter() {
    thread_local MacCounter* counter = nullptr;
    return counter;
}
}  // namespace detail

inline void count_macs(std::uint64_t n) {
    if (MacCounter* c = detail::active_mac_counter()) c->macs += n;
}

/// RAII activation of a counter on the current thread.
class MacScope {
public:
    explicit MacScope(MacCounter& counter) : previous_(detail::active_mac_counter()) {
        detail::active_mac_counter() = &counter;
    }
    ~MacScope() { detail::active_mac_counter() = previous_; }
    MacScope(const MacScope&) = delete;
    MacScope& operator=(const MacScope&) = delete;

private:
    MacCounter* previous_;
};

}  // namespace spygr
