#pragma once

#include <stdexcept>
#include <string>

namespace epinv {

// Every library failure derives from Error and carries a stable machine-readable
// code; the CLI copies it into summary.json.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

#define EPINV_DEFINE_ERROR(Name, code_str)                      \
  class Name : public Error {                                   \
   public:                                                      \
    explicit Name(const std::string& what) : Error(code_str, what) {} \
  };

EPINV_DEFINE_ERROR(NotPositiveDefinite, "not_positive_definite")
EPINV_DEFINE_ERROR(DowndateFailed, "downdate_failed")
EPINV_DEFINE_ERROR(DegenerateSupport, "degenerate_support")
EPINV_DEFINE_ERROR(QuadratureNotConverged, "quadrature_not_converged")
EPINV_DEFINE_ERROR(CavityInvalid, "cavity_invalid")
EPINV_DEFINE_ERROR(GlobalNotPD, "global_not_pd")
EPINV_DEFINE_ERROR(NonFiniteIterate, "non_finite_iterate")
EPINV_DEFINE_ERROR(MeshGenFailed, "mesh_gen_failed")
EPINV_DEFINE_ERROR(SingularSystem, "singular_system")
EPINV_DEFINE_ERROR(AdaptFailed, "adapt_failed")
EPINV_DEFINE_ERROR(ParseError, "parse_error")
EPINV_DEFINE_ERROR(ShapeMismatch, "shape_mismatch")

#undef EPINV_DEFINE_ERROR

}  // namespace epinv
