#pragma once

#include <stdexcept>
#include <string>

namespace ilab {

struct DimError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IndexError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct LexiconError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AlignmentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PairingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ReportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ProjectionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ilab
