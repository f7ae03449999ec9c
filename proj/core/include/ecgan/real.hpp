#pragma once

namespace ecgan {

// Production builds run in 32-bit. The 64-bit variant (ECGAN_DOUBLE) backs the
// tight-tolerance gradient oracles in the test suite.
#if defined(ECGAN_DOUBLE) && ECGAN_DOUBLE
using Real = double;
#else
using Real = float;
#endif

}  // namespace ecgan
