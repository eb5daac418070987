#include "eve/error.hpp"
#include "eve/ledger.hpp"

#include <algorithm>
#include <sstream>

namespace eve::ledger {

namespace {

struct ContractName {
  Contract c;
  std::string_view name;
};
constexpr ContractName kContracts[] = {
    {Contract::ACT, "ACT"}, {Contract::BC, "BC"}, {Contract::RC, "RC"}, {Contract::MC, "MC"}};

// Aggregator id encoded in "agg{n}channel", or -1.
int channel_aggregator(const std::string& channel) {
  if (channel.rfind("agg", 0) != 0 || channel.size() < 11) return -1;
  auto end = channel.find("channel");
  if (end == std::string::npos) return -1;
  try {
    return std::stoi(channel.substr(3, end - 3));
  } catch (...) {
    return -1;
  }
}

int identity_aggregator(const Identity& who) {
  auto a = who.attr("aggregator");
  if (a.empty()) return -1;
  try {
    return std::stoi(a);
  } catch (...) {
    return -1;
  }
}

}  // namespace

std::string_view to_string(Contract c) {
  for (const auto& k : kContracts)
    if (k.c == c) return k.name;
  return "?";
}

Contract contract_from_string(std::string_view s) {
  for (const auto& k : kContracts)
    if (k.name == s) return k.c;
  throw Error(ErrorCode::ParseError, "unknown contract " + std::string(s));
}

std::string Identity::attr(const std::string& key) const {
  auto it = attrs.find(key);
  return it == attrs.end() ? std::string() : it->second;
}

Identity Identity::admin(int aggregator) {
  return {"agg" + std::to_string(aggregator) + "-admin",
          {{"role", "admin"}, {"aggregator", std::to_string(aggregator)}}};
}

Identity Identity::prosumer(const std::string& id, int aggregator, const std::string& asset) {
  return {id, {{"role", "prosumer"}, {"aggregator", std::to_string(aggregator)}, {"asset", asset}}};
}

Identity Identity::meter(int aggregator) {
  return {"agg" + std::to_string(aggregator) + "-meter",
          {{"role", "meter"}, {"aggregator", std::to_string(aggregator)}}};
}

Identity Identity::operator_() { return {"operator", {{"role", "operator"}}}; }

std::string common_channel() { return "commonchannel"; }
std::string aggregator_channel(int n) { return "agg" + std::to_string(n) + "channel"; }

json Transaction::to_json() const {
  return json{{"channel", channel}, {"contract", std::string(to_string(contract))},
              {"op", op},           {"submitter", submitter},
              {"type", type},       {"key", key},
              {"window", window},   {"round", round},
              {"readers", readers}, {"value", value}};
}

Transaction Transaction::from_json(const json& j) {
  Transaction t;
  try {
    t.channel = j.at("channel").get<std::string>();
    t.contract = contract_from_string(j.at("contract").get<std::string>());
    t.op = j.at("op").get<std::string>();
    t.submitter = j.at("submitter").get<std::string>();
    t.type = j.at("type").get<std::string>();
    t.key = j.at("key").get<std::string>();
    t.window = j.at("window").get<int>();
    t.round = j.at("round").get<int>();
    t.readers = j.at("readers").get<std::vector<int>>();
    t.value = j.at("value");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("transaction: ") + e.what());
  }
  return t;
}

Transaction LedgerBlock::tx() const {
  try {
    return Transaction::from_json(json::parse(payload));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("block payload: ") + e.what());
  }
}

void AccessPolicy::add(AccessRule rule) { rules_.push_back(std::move(rule)); }

bool AccessPolicy::permits(Access access, const Identity& who, const Transaction& tx) const {
  for (const auto& r : rules_) {
    if (r.access != access || r.contract != tx.contract) continue;
    if (r.channel != "*" && r.channel != tx.channel) continue;
    if (r.op != "*" && r.op != tx.op) continue;
    if (r.allow && r.allow(who, tx)) return true;
  }
  return false;
}

AccessPolicy standard_policy() {
  AccessPolicy p;
  const std::string common = common_channel();
  auto role = [](const Identity& w) { return w.attr("role"); };
  auto own_channel = [](const Identity& w, const Transaction& tx) {
    int n = channel_aggregator(tx.channel);
    return n >= 0 && n == identity_aggregator(w);
  };
  auto listed = [](const Identity& w, const Transaction& tx) {
    if (tx.readers.empty()) return true;
    int n = identity_aggregator(w);
    return std::find(tx.readers.begin(), tx.readers.end(), n) != tx.readers.end();
  };

  // Global ledger: accounts and round records written by aggregator admins.
  p.add({common, Contract::ACT, "*", Access::Write, [=](const Identity& w, const Transaction& tx) {
           return (role(w) == "admin" || role(w) == "operator") && tx.submitter == w.id;
         }});
  p.add({common, Contract::RC, "*", Access::Write, [=](const Identity& w, const Transaction& tx) {
           return role(w) == "admin" && tx.submitter == w.id;
         }});
  p.add({common, Contract::ACT, "*", Access::Read, [=](const Identity& w, const Transaction&) {
           return role(w) == "admin" || role(w) == "operator";
         }});
  p.add({common, Contract::RC, "*", Access::Read, [=](const Identity& w, const Transaction& tx) {
           if (role(w) == "operator") return tx.readers.empty();
           return role(w) == "admin" && listed(w, tx);
         }});

  // Local ledgers: bids by the channel's prosumers, dispatch by its admin, meters via MC.
  p.add({"*", Contract::BC, "submit_bid", Access::Write,
         [=](const Identity& w, const Transaction& tx) {
           return role(w) == "prosumer" && own_channel(w, tx) && tx.submitter == w.id;
         }});
  p.add({"*", Contract::BC, "dispatch", Access::Write,
         [=](const Identity& w, const Transaction& tx) {
           return role(w) == "admin" && own_channel(w, tx) && tx.submitter == w.id;
         }});
  p.add({"*", Contract::MC, "*", Access::Write, [=](const Identity& w, const Transaction& tx) {
           return (role(w) == "meter" || role(w) == "admin") && own_channel(w, tx) &&
                  tx.submitter == w.id;
         }});
  for (Contract c : {Contract::BC, Contract::MC}) {
    p.add({"*", c, "*", Access::Read, [=](const Identity& w, const Transaction& tx) {
             if (!own_channel(w, tx)) return false;
             if (role(w) == "admin") return true;
             return role(w) == "prosumer" && tx.submitter == w.id;
           }});
  }
  return p;
}

Ledger::Ledger(std::string channel, std::shared_ptr<const AccessPolicy> policy,
               std::optional<std::string> journal_path)
    : channel_(std::move(channel)), policy_(std::move(policy)) {
  if (journal_path) {
    journal_.emplace(*journal_path, std::ios::out | std::ios::trunc | std::ios::binary);
    if (!*journal_) throw Error(ErrorCode::IoFailure, "cannot open journal " + *journal_path);
  }
}

std::string journal_line(const LedgerBlock& b) {
  json j = b.header();
  j["payload"] = b.payload;
  return j.dump();
}

std::uint64_t Ledger::append(const Transaction& tx, const Identity& who) {
  if (tx.channel != channel_)
    throw Error(ErrorCode::ChannelMismatch, "transaction for " + tx.channel + " sent to " + channel_);
  if (!policy_->permits(Access::Write, who, tx))
    throw Error(ErrorCode::AccessDenied, who.id + " may not " + tx.op + " on " + channel_);
  std::uint64_t index;
  {
    std::unique_lock lock(mu_);
    LedgerBlock b;
    b.index = blocks_.size();
    b.timestamp = b.index;
    b.prev_hash = blocks_.empty() ? Digest{} : block_digest(blocks_.back());
    b.payload = canonical(tx.to_json());
    b.payload_hash = sha256(b.payload);
    if (journal_) {
      *journal_ << journal_line(b) << '\n';
      journal_->flush();
      if (!*journal_) throw Error(ErrorCode::IoFailure, "journal write failed");
    }
    index = b.index;
    blocks_.push_back(std::move(b));
    state_[tx.key] = index;
  }
  {
    std::lock_guard<std::mutex> lk(wait_mu_);
  }
  cv_.notify_all();
  return index;
}

bool Ledger::readable(const Transaction& tx, const Identity& who) const {
  return policy_->permits(Access::Read, who, tx);
}

Record Ledger::record(const std::string& key, const Identity& who) const {
  std::shared_lock lock(mu_);
  auto it = state_.find(key);
  if (it == state_.end()) throw Error(ErrorCode::NotFound, key);
  const LedgerBlock& b = blocks_[it->second];
  Transaction tx = b.tx();
  if (!readable(tx, who)) throw Error(ErrorCode::AccessDenied, who.id + " may not read " + key);
  return {key, tx.value, b.index, tx};
}

json Ledger::query(const std::string& key, const Identity& who) const {
  return record(key, who).value;
}

std::vector<Record> Ledger::select(const Selector& sel, const Identity& who) const {
  std::shared_lock lock(mu_);
  std::vector<Record> out;
  auto begin = state_.begin();
  if (sel.key_prefix) begin = state_.lower_bound(*sel.key_prefix);
  for (auto it = begin; it != state_.end(); ++it) {
    if (sel.key_prefix && it->first.compare(0, sel.key_prefix->size(), *sel.key_prefix) != 0) break;
    const LedgerBlock& b = blocks_[it->second];
    Transaction tx = b.tx();
    if (sel.type && tx.type != *sel.type) continue;
    if (sel.window && tx.window != *sel.window) continue;
    if (sel.round && tx.round != *sel.round) continue;
    if (sel.submitter && tx.submitter != *sel.submitter) continue;
    if (!readable(tx, who)) continue;
    out.push_back({it->first, tx.value, b.index, std::move(tx)});
  }
  return out;
}

std::vector<LedgerBlock> Ledger::blocks() const {
  std::shared_lock lock(mu_);
  return blocks_;
}

std::size_t Ledger::size() const {
  std::shared_lock lock(mu_);
  return blocks_.size();
}

bool Ledger::wait_for(const std::function<bool()>& ready, std::chrono::milliseconds timeout) const {
  std::unique_lock<std::mutex> lk(wait_mu_);
  return cv_.wait_for(lk, timeout, ready);
}

std::vector<LedgerBlock> read_journal(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);
  std::vector<LedgerBlock> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      LedgerBlock b;
      b.index = j.at("index").get<std::uint64_t>();
      b.prev_hash = from_hex(j.at("prev_hash").get<std::string>());
      b.payload_hash = from_hex(j.at("payload_hash").get<std::string>());
      b.timestamp = j.at("timestamp").get<std::uint64_t>();
      b.payload = j.at("payload").get<std::string>();
      out.push_back(std::move(b));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseError, path + ": " + e.what());
    }
  }
  return out;
}

}  // namespace eve::ledger
