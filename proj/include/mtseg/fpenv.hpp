#pragma once

#if defined(__SSE__) || defined(__x86_64__)
#include <xmmintrin.h>
#define MTSEG_HAS_MXCSR 1
#endif

namespace mtseg {

/// Sets flush-to-zero and denormals-are-zero for the current thread while in
/// scope. Leaky activations drive many values into the subnormal range,
/// where x86 arithmetic is several times slower; both training and
/// inference run under this guard so results do not depend on the caller.
class FlushDenormals {
public:
    FlushDenormals() {
#ifdef MTSEG_HAS_MXCSR
        saved_ = _mm_getcsr();
        _mm_setcsr(saved_ | kFtzDaz);
#endif
    }
    ~FlushDenormals() {
#ifdef MTSEG_HAS_MXCSR
        _mm_setcsr(saved_);
#endif
    }
    FlushDenormals(const FlushDenormals&) = delete;
    FlushDenormals& operator=(const FlushDenormals&) = delete;

private:
#ifdef MTSEG_HAS_MXCSR
    static constexpr unsigned kFtzDaz = 0x8040;
    unsigned saved_ = 0;
#endif
};

}  // namespace mtseg
