#pragma once

#include <string>
#include <vector>

namespace immune {

// Token alphabet of a scenario. Token ids are indices into `tokens`;
// `eos_id` marks the end-of-sequence symbol that terminates every response.
struct Vocab {
  std::vector<std::string> tokens;
  int eos_id = -1;

  int size() const { return static_cast<int>(tokens.size()); }

  // Id of `symbol`, or -1 if absent.
  int id_of(const std::string& symbol) const;

  const std::string& symbol(int id) const { return tokens[static_cast<size_t>(id)]; }

  // Throws ValidationError unless tokens are unique, size >= 2 and eos_id
  // names a valid entry.
  void validate() const;
};

}  // namespace immune
