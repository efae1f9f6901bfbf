#pragma once

#include <stdexcept>
#include <string>

namespace costrgcn {

// Base for every error raised by the library. The CLI maps these to a
// diagnostic and a nonzero exit status.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define COSTRGCN_DEFINE_ERROR(Name) \
  class Name : public Error {        \
   public:                           \
    using Error::Error;              \
  }

COSTRGCN_DEFINE_ERROR(ConfigError);
COSTRGCN_DEFINE_ERROR(ShapeError);
COSTRGCN_DEFINE_ERROR(MissingReferenceError);
COSTRGCN_DEFINE_ERROR(DegenerateSkeletonError);
COSTRGCN_DEFINE_ERROR(StateError);
COSTRGCN_DEFINE_ERROR(LabelError);
COSTRGCN_DEFINE_ERROR(DataError);
COSTRGCN_DEFINE_ERROR(InputError);
COSTRGCN_DEFINE_ERROR(ParseError);

#undef COSTRGCN_DEFINE_ERROR

// Raised when an operation produces NaN or Inf. Carries the producing
// primitive and the module that was running when it happened.
class NumericError : public Error {
 public:
  NumericError(const std::string& op, const std::string& where)
      : Error("non-finite value produced by '" + op + "'" +
              (where.empty() ? std::string() : " in " + where)),
        op_(op),
        where_(where) {}

  const std::string& op() const { return op_; }
  const std::string& where() const { return where_; }

 private:
  std::string op_;
  std::string where_;
};

}  // namespace costrgcn
