#pragma once

#include <string>
#include <vector>

#include "sesoffer/admm.hpp"

namespace sesoffer {

/// One framed message as it crossed the boundary, byte-exact.
struct TranscriptRecord {
  enum class Dir { kAggToUtil, kUtilToAgg } dir;
  int iter = 0;
  std::string payload;
};

struct Transcript {
  std::vector<TranscriptRecord> records;
  void save(const std::string& path) const;
};

enum class TransportKind { kInProcess, kSocket };

struct DuetResult {
  EquilibriumResult result;
  Transcript transcript;
};

/// Runs the two agents as concurrent actors exchanging only the shared-data
/// messages over the chosen transport, in strict lockstep. Iterations match
/// the single-process consensus loop exactly.
DuetResult run_duet(const ProblemInstance& inst, const AdmmOptions& opts,
                    TransportKind kind = TransportKind::kInProcess);

// wire codec, exposed for schema tests
std::string encode_agg_share(const AggShare& s);
std::string encode_util_share(const UtilShare& s);
AggShare decode_agg_share(const std::string& payload);
UtilShare decode_util_share(const std::string& payload);

struct SchemaError : std::runtime_error {
  explicit SchemaError(const std::string& field)
      : std::runtime_error("unexpected message field '" + field + "'"),
        field(field) {}
  std::string field;
};

// privacy audit
struct AuditHit {
  int record = 0;
  std::string field;
};

struct AuditReport {
  std::vector<AuditHit> hits;
  int records_scanned = 0;
  bool clean() const { return hits.empty(); }
};

/// Field-name registry of private model data that must never cross the
/// boundary: network parameters and topology, bus injections, resource
/// operational sets, offer prices and pair structure.
const std::vector<std::string>& default_privacy_registry();

AuditReport audit_privacy(const Transcript& transcript,
                          const std::vector<std::string>& forbidden =
                              default_privacy_registry());

}  // namespace sesoffer
