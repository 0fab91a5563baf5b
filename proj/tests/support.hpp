#pragma once

#include <gtest/gtest.h>

#include <optional>

#include "iclb/error.hpp"

namespace iclb::testing {

/// Error code raised by `f`, or nullopt if it returned normally.
template <typename F>
std::optional<ErrorCode> code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace iclb::testing

#define EXPECT_CODE(expr, code) EXPECT_EQ(::iclb::testing::code_of([&] { (void)(expr); }), ::iclb::ErrorCode::code)
