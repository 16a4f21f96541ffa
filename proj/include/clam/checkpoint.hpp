#pragma once

#include <optional>
#include <string>

#include "clam/cae.hpp"
#include "clam/cluster.hpp"

namespace clam {

// Binary checkpoint: magic "CLAM", version, layer specs, little-endian f64
// parameter blobs, latent dim, optional cluster head.
void save_checkpoint(const CaeModel& model, const ClusterHead* head, const std::string& path);

struct Checkpoint {
  CaeModel model;
  std::optional<ClusterHead> head;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace clam
