#pragma once

#include <cinttypes>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "cmcr/common.hpp"
#include "cmcr/matrix.hpp"

namespace cmcr {

// Deterministic JSON emission: fixed key order comes from call order, reals
// are printed with 17 significant digits so values round-trip exactly and
// identical runs produce byte-identical files.
class JsonWriter {
 public:
  static std::string format_real(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
  }

  void begin_object() {
    comma();
    out_ += '{';
    stack_.push_back(true);
  }
  void end_object() {
    out_ += '}';
    stack_.pop_back();
  }
  void begin_array() {
    comma();
    out_ += '[';
    stack_.push_back(true);
  }
  void end_array() {
    out_ += ']';
    stack_.pop_back();
  }

  void key(std::string_view k) {
    comma();
    out_ += '"';
    out_ += k;
    out_ += "\":";
    after_key_ = true;
  }

  void value(double x) {
    comma();
    out_ += format_real(x);
  }
  void value(std::uint64_t x) {
    comma();
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%" PRIu64, x);
    out_ += buf;
  }
  void value(int x) { value(static_cast<std::uint64_t>(static_cast<long long>(x))); }
  void value(bool b) {
    comma();
    out_ += b ? "true" : "false";
  }
  void value(const char* s) { value(std::string_view(s)); }
  void value(std::string_view s) {
    comma();
    out_ += '"';
    for (char c : s) {
      if (c == '"' || c == '\\') out_ += '\\';
      out_ += c;
    }
    out_ += '"';
  }

  void matrix_values(const Matrix& m) {  // flat row-major array
    begin_array();
    for (double x : m.v) value(x);
    end_array();
  }

  const std::string& str() const { return out_; }

 private:
  void comma() {
    if (after_key_) {
      after_key_ = false;
      return;
    }
    if (!stack_.empty()) {
      if (!stack_.back()) out_ += ',';
      stack_.back() = false;
    }
  }

  std::string out_;
  std::vector<bool> stack_;
  bool after_key_ = false;
};

}  // namespace cmcr
