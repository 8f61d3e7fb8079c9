#pragma once

namespace sf {

/// Entry point of the `sf` executable. Returns 0 on success, 1 on a usage or
/// validation error, 2 on a runtime failure.
int run(int argc, const char* const* argv);

} // namespace sf
