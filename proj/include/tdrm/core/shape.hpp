#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "tdrm/core/common.hpp"

namespace tdrm {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

// Row-major strides.
inline Shape strides_of(const Shape& s) {
  Shape st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// NumPy broadcasting: shapes are right-aligned, dims must match or be 1.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da == db) {
      out[i] = da;
    } else if (da == 1 || db == 1) {
      out[i] = da * db;
    } else {
      contract_fail("broadcast mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
  }
  return out;
}

// Strides of `in` aligned to broadcast result `out`; broadcast dims get stride 0.
inline Shape broadcast_strides(const Shape& in, const Shape& out) {
  Shape st = strides_of(in);
  Shape r(out.size(), 0);
  size_t off = out.size() - in.size();
  for (size_t i = 0; i < in.size(); ++i) r[off + i] = in[i] == 1 ? 0 : st[i];
  return r;
}

}  // namespace tdrm
