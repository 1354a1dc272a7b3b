#pragma once

namespace ctxgen {

// Training and inference run in 32-bit floats. Defining CTXGEN_FP64 switches
// the whole library to doubles; that build exists only to tighten the
// finite-difference gradient checks.
#ifdef CTXGEN_FP64
using real = double;
#else
using real = float;
#endif

}  // namespace ctxgen
