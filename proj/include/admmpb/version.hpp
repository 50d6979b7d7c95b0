#ifndef ADMMPB_VERSION_HPP
#define ADMMPB_VERSION_HPP

namespace admmpb {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace admmpb

#endif
