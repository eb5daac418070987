#pragma once

// Simulated permissioned ledger: hash-chained blocks over a key-value world state,
// channel isolation and deny-by-default attribute-based access control.

#include <json.hpp>

#include <array>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

namespace eve::ledger {

using json = nlohmann::json;
using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::string_view bytes);
std::string to_hex(const Digest& d);
Digest from_hex(std::string_view hex);
/// Sorted keys, no insignificant whitespace.
std::string canonical(const json& value);

enum class Contract { ACT, BC, RC, MC };
std::string_view to_string(Contract c);
Contract contract_from_string(std::string_view s);

struct Identity {
  std::string id;                              // token / certificate subject
  std::map<std::string, std::string> attrs;    // role, aggregator, asset, ...

  std::string attr(const std::string& key) const;
  static Identity admin(int aggregator);
  static Identity prosumer(const std::string& id, int aggregator, const std::string& asset);
  static Identity meter(int aggregator);
  static Identity operator_();
};

std::string common_channel();
std::string aggregator_channel(int n);

struct Transaction {
  std::string channel;
  Contract contract = Contract::RC;
  std::string op;
  std::string submitter;
  std::string type;  // pricing | verification | account | bid | dispatch | measurement | ...
  std::string key;
  int window = -1;
  int round = -1;
  std::vector<int> readers;  // aggregator ids allowed to read; empty = channel default
  json value;

  json to_json() const;
  static Transaction from_json(const json& j);
};

struct LedgerBlock {
  std::uint64_t index = 0;
  Digest prev_hash{};
  Digest payload_hash{};
  std::uint64_t timestamp = 0;
  std::string payload;  // canonical transaction JSON

  Transaction tx() const;
  json header() const;
};

/// Digest of a whole block (header fields plus payload hash).
Digest block_digest(const LedgerBlock& block);

struct ChainCheck {
  bool ok = true;
  std::uint64_t first_bad = 0;
  std::string reason;
};

/// Recomputes every payload hash and link from genesis.
ChainCheck verify_chain(std::span<const LedgerBlock> blocks);

enum class Access { Read, Write };

struct AccessRule {
  std::string channel;   // exact channel or "*"
  Contract contract = Contract::RC;
  std::string op;        // exact op or "*"
  Access access = Access::Read;
  std::function<bool(const Identity&, const Transaction&)> allow;
};

class AccessPolicy {
 public:
  void add(AccessRule rule);
  bool permits(Access access, const Identity& who, const Transaction& tx) const;

 private:
  std::vector<AccessRule> rules_;
};

/// The rule set used by the simulator (see README for the table).
AccessPolicy standard_policy();

struct Selector {
  std::optional<std::string> type;
  std::optional<int> window;
  std::optional<int> round;
  std::optional<std::string> submitter;
  std::optional<std::string> key_prefix;
};

struct Record {
  std::string key;
  json value;
  std::uint64_t block = 0;
  Transaction tx;
};

class Ledger {
 public:
  Ledger(std::string channel, std::shared_ptr<const AccessPolicy> policy,
         std::optional<std::string> journal_path = std::nullopt);

  const std::string& channel() const { return channel_; }

  /// Appends after the write rule passes; returns the block index (the ACK).
  /// Throws Error{AccessDenied | ChannelMismatch}.
  std::uint64_t append(const Transaction& tx, const Identity& who);

  /// Current world-state value. Throws Error{AccessDenied | NotFound}.
  json query(const std::string& key, const Identity& who) const;
  Record record(const std::string& key, const Identity& who) const;
  /// Matching readable records in key order; unreadable ones are skipped.
  std::vector<Record> select(const Selector& sel, const Identity& who) const;

  std::vector<LedgerBlock> blocks() const;
  std::size_t size() const;

  /// Blocks until `ready` holds or the timeout passes. Returns the final predicate value.
  bool wait_for(const std::function<bool()>& ready, std::chrono::milliseconds timeout) const;

 private:
  bool readable(const Transaction& tx, const Identity& who) const;

  std::string channel_;
  std::shared_ptr<const AccessPolicy> policy_;
  mutable std::shared_mutex mu_;
  mutable std::mutex wait_mu_;
  mutable std::condition_variable_any cv_;
  std::vector<LedgerBlock> blocks_;
  std::map<std::string, std::uint64_t> state_;  // key -> block index
  std::optional<std::ofstream> journal_;
};

std::vector<LedgerBlock> read_journal(const std::string& path);
std::string journal_line(const LedgerBlock& block);

// Contract entry points.

enum class Stage { OpenBidding, Pricing, Delivery, Closed };

/// Tracks the lifecycle stage of each solving window.
class WindowClock {
 public:
  void set(int window, Stage stage);
  Stage stage(int window) const;

 private:
  mutable std::mutex mu_;
  std::map<int, Stage> stages_;
};

std::uint64_t act_init(Ledger& global, const Identity& who, const std::string& account,
                       const json& attributes);
/// The bid is bound to the caller's identity. Throws Error{WindowClosed | AccessDenied}.
std::uint64_t bc_submit_bid(Ledger& local, const WindowClock& clock, int window,
                            const Identity& who, const json& bid);
std::vector<Record> bc_last_bids(const Ledger& local, int window, const Identity& who);
std::uint64_t bc_put_dispatch(Ledger& local, const Identity& who, int window,
                              const std::string& prosumer, const json& value);
std::uint64_t rc_put_round(Ledger& global, const Identity& who, const std::string& type,
                           int window, int round, const std::string& key, const json& value,
                           std::vector<int> readers = {});
/// Accepts one interval (`interval` >= 0) or a batch of all intervals (`interval` < 0).
/// Measurements are only accepted for windows whose delivery has started.
std::uint64_t mc_submit_measurements(Ledger& local, const WindowClock& clock, const Identity& who,
                                     int window, int interval, const json& values);

/// Appends with retries until an ACK is returned.
std::uint64_t append_with_retry(Ledger& ledger, const Transaction& tx, const Identity& who,
                                int attempts = 3);

}  // namespace eve::ledger
