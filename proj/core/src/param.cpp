#include "pfedcr/param.hpp"

#include <cstring>

#include <fmt/format.h>

#include "pfedcr/errors.hpp"

namespace pfedcr {

std::string_view group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::body: return "body";
    case ParamGroup::head: return "head";
    case ParamGroup::eca: return "eca";
  }
  return "body";
}

ParamGroup group_from_name(std::string_view name) {
  if (name == "body") return ParamGroup::body;
  if (name == "head") return ParamGroup::head;
  if (name == "eca") return ParamGroup::eca;
  throw config_error(fmt::format("unknown parameter group '{}'", name));
}

bool values_bitwise_equal(const ParamSet& a, const ParamSet& b) {
  if (!same_structure(a, b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a[i].value.data;
    const auto& y = b[i].value.data;
    if (std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

ParamSetT<double> to_double(const ParamSet& ps) {
  ParamSetT<double> out;
  out.params.reserve(ps.size());
  for (const auto& p : ps.params)
    out.params.emplace_back(p.name, p.group, cast_tensor<float, double>(p.value));
  return out;
}

ParamSet to_float(const ParamSetT<double>& ps) {
  ParamSet out;
  out.params.reserve(ps.size());
  for (const auto& p : ps.params)
    out.params.emplace_back(p.name, p.group, cast_tensor<double, float>(p.value));
  return out;
}

}  // namespace pfedcr
