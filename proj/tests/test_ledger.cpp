#include <doctest.h>

#include "eve/error.hpp"
#include "eve/ledger.hpp"

#include <cstdio>
#include <filesystem>
#include <random>
#include <thread>

using namespace eve;
using namespace eve::ledger;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::ParseError;
}

std::shared_ptr<const AccessPolicy> policy() {
  static auto p = std::make_shared<const AccessPolicy>(standard_policy());
  return p;
}

Transaction rc(const Identity& who, const std::string& key, json value,
               std::vector<int> readers = {}) {
  Transaction tx;
  tx.channel = common_channel();
  tx.contract = Contract::RC;
  tx.op = "put_round";
  tx.submitter = who.id;
  tx.type = "pricing";
  tx.key = key;
  tx.value = std::move(value);
  tx.readers = std::move(readers);
  return tx;
}

}  // namespace

TEST_CASE("sha256 matches reference digests") {
  CHECK(to_hex(sha256("abc")) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(to_hex(sha256("")) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  // Canonical form sorts keys and drops whitespace.
  json j = json::parse(R"({ "b": [1, 2], "a": 1 })");
  CHECK(canonical(j) == R"({"a":1,"b":[1,2]})");
  CHECK(to_hex(sha256(canonical(j))) ==
        "8baa73198470c7bb4c3ce142a8fd651affc0310d878bb9bd159e37a573fb4874");
  auto d = sha256("abc");
  CHECK(from_hex(to_hex(d)) == d);
}

TEST_CASE("append builds a linked chain") {
  Ledger gl(common_channel(), policy());
  auto admin = Identity::admin(0);
  CHECK(gl.append(rc(admin, "k0", 1), admin) == 0);
  auto blocks = gl.blocks();
  CHECK(blocks[0].prev_hash == Digest{});
  CHECK(gl.append(rc(admin, "k1", 2), admin) == 1);
  blocks = gl.blocks();
  CHECK(blocks[1].prev_hash == block_digest(blocks[0]));
  CHECK(blocks[1].payload_hash == sha256(blocks[1].payload));
  CHECK(verify_chain(blocks).ok);
}

TEST_CASE("write then read round-trips") {
  Ledger gl(common_channel(), policy());
  auto admin = Identity::admin(2);
  json v = {{"x", {1.0 / 3.0, -2.5e-17, 12345.678901234567}}, {"s", "text"}};
  gl.append(rc(admin, "key", v), admin);
  CHECK(gl.query("key", admin) == v);
  CHECK(gl.query("key", admin).dump() == v.dump());
  CHECK(code_of([&] { gl.query("missing", admin); }) == ErrorCode::NotFound);
}

TEST_CASE("access control and channel isolation") {
  Ledger gl(common_channel(), policy());
  Ledger ll(aggregator_channel(1), policy());
  Ledger ll2(aggregator_channel(2), policy());
  WindowClock clock;
  clock.set(0, Stage::OpenBidding);
  auto alice = Identity::prosumer("alice", 1, "EV");

  CHECK(bc_submit_bid(ll, clock, 0, alice, json{{"kind", "EV"}}) == 0);
  // The same prosumer may not write to the common channel.
  auto tx = rc(alice, "bad", 1);
  CHECK(code_of([&] { gl.append(tx, alice); }) == ErrorCode::AccessDenied);
  // Nor bid on another aggregator's channel.
  CHECK(code_of([&] { bc_submit_bid(ll2, clock, 0, alice, json{}); }) == ErrorCode::AccessDenied);
  // A transaction addressed to one channel cannot be appended to another.
  tx.channel = aggregator_channel(2);
  CHECK(code_of([&] { ll.append(tx, Identity::admin(1)); }) == ErrorCode::ChannelMismatch);
  // Forging another submitter is refused.
  auto admin0 = Identity::admin(0);
  auto forged = rc(admin0, "f", 1);
  forged.submitter = Identity::admin(1).id;
  CHECK(code_of([&] { gl.append(forged, admin0); }) == ErrorCode::AccessDenied);

  // Edge-private verification record for (0, 1).
  rc_put_round(gl, admin0, "verification", 0, 1, "ver/0/1", json{{"x", 1}}, {0, 1});
  CHECK(gl.query("ver/0/1", Identity::admin(1)) == json{{"x", 1}});
  CHECK(code_of([&] { gl.query("ver/0/1", Identity::admin(3)); }) == ErrorCode::AccessDenied);
  Selector sel;
  sel.type = "verification";
  CHECK(gl.select(sel, Identity::admin(3)).empty());
  CHECK(gl.select(sel, Identity::admin(0)).size() == 1);

  // Prosumers read only their own records; other aggregators' admins read nothing.
  auto bob = Identity::prosumer("bob", 1, "TCL");
  bc_submit_bid(ll, clock, 0, bob, json{{"kind", "TCL"}});
  CHECK(bc_last_bids(ll, 0, alice).size() == 1);
  CHECK(bc_last_bids(ll, 0, Identity::admin(1)).size() == 2);
  CHECK(bc_last_bids(ll, 0, Identity::admin(2)).empty());
  CHECK(code_of([&] { ll.query("bid/000000/bob", alice); }) == ErrorCode::AccessDenied);
}

TEST_CASE("bidding window and last-bid rule") {
  Ledger ll(aggregator_channel(0), policy());
  WindowClock clock;
  auto p = Identity::prosumer("p1", 0, "Storage");
  CHECK(code_of([&] { bc_submit_bid(ll, clock, 3, p, json{{"v", 1}}); }) ==
        ErrorCode::WindowClosed);
  clock.set(3, Stage::OpenBidding);
  bc_submit_bid(ll, clock, 3, p, json{{"v", 1}});
  bc_submit_bid(ll, clock, 3, p, json{{"v", 2}});
  auto bids = bc_last_bids(ll, 3, Identity::admin(0));
  REQUIRE(bids.size() == 1);
  CHECK(bids[0].value == json{{"v", 2}});
  CHECK(bids[0].tx.submitter == "p1");
  clock.set(3, Stage::Pricing);
  CHECK(code_of([&] { bc_submit_bid(ll, clock, 3, p, json{{"v", 3}}); }) ==
        ErrorCode::WindowClosed);
  CHECK(ll.size() == 2);
}

TEST_CASE("measurements are accepted once delivery starts") {
  Ledger ll(aggregator_channel(4), policy());
  WindowClock clock;
  auto meter = Identity::meter(4);
  clock.set(1, Stage::Pricing);
  CHECK(code_of([&] { mc_submit_measurements(ll, clock, meter, 1, 0, json{1}); }) ==
        ErrorCode::WindowClosed);
  clock.set(1, Stage::Delivery);
  mc_submit_measurements(ll, clock, meter, 1, 0, json{1.5});
  mc_submit_measurements(ll, clock, meter, 1, 1, json{2.5});
  mc_submit_measurements(ll, clock, meter, 1, -1, json{{1.5, 2.5}});
  Selector sel;
  sel.type = "measurement";
  sel.window = 1;
  CHECK(ll.select(sel, Identity::admin(4)).size() == 3);
  auto stranger = Identity::meter(5);
  CHECK(code_of([&] { mc_submit_measurements(ll, clock, stranger, 1, 0, json{1}); }) ==
        ErrorCode::AccessDenied);
}

TEST_CASE("round records filter by type tag") {
  Ledger gl(common_channel(), policy());
  auto a = Identity::admin(0);
  rc_put_round(gl, a, "pricing", 0, 0, "pricing/0", json{1});
  rc_put_round(gl, a, "verification", 0, 0, "verification/0", json{2});
  rc_put_round(gl, a, "pricing", 0, 1, "pricing/1", json{3});
  Selector s;
  s.type = "pricing";
  CHECK(gl.select(s, a).size() == 2);
  s.round = 1;
  auto r = gl.select(s, a);
  REQUIRE(r.size() == 1);
  CHECK(r[0].value == json{3});
  Selector v;
  v.type = "verification";
  CHECK(gl.select(v, a).size() == 1);
}

TEST_CASE("tampering is detected at the first altered block") {
  Ledger gl(common_channel(), policy());
  auto a = Identity::admin(0);
  for (int i = 0; i < 10; ++i) gl.append(rc(a, "k" + std::to_string(i), i), a);
  auto blocks = gl.blocks();
  CHECK(verify_chain(blocks).ok);

  auto flipped = blocks;
  flipped[5].payload[3] ^= 0x01;
  auto c = verify_chain(flipped);
  CHECK(!c.ok);
  CHECK(c.first_bad == 5);

  auto relinked = blocks;
  relinked[7].prev_hash[0] ^= 0x80;
  CHECK(verify_chain(relinked).first_bad == 7);

  auto truncated = blocks;
  truncated.pop_back();
  CHECK(verify_chain(truncated).ok);
}

TEST_CASE("concurrent appends serialize without gaps") {
  Ledger gl(common_channel(), policy());
  std::vector<std::thread> th;
  for (int n = 0; n < 4; ++n)
    th.emplace_back([&, n] {
      auto a = Identity::admin(n);
      for (int i = 0; i < 50; ++i)
        gl.append(rc(a, "k" + std::to_string(n) + "/" + std::to_string(i), i), a);
    });
  for (auto& t : th) t.join();
  auto blocks = gl.blocks();
  REQUIRE(blocks.size() == 200);
  for (std::size_t i = 0; i < blocks.size(); ++i) CHECK(blocks[i].index == i);
  CHECK(verify_chain(blocks).ok);
}

TEST_CASE("wait_for sees appends from another thread") {
  Ledger gl(common_channel(), policy());
  auto a = Identity::admin(0);
  std::thread writer([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    gl.append(rc(a, "late", 1), a);
  });
  bool ok = gl.wait_for([&] { return gl.size() == 1; }, std::chrono::milliseconds(5000));
  writer.join();
  CHECK(ok);
  CHECK(!gl.wait_for([&] { return gl.size() == 2; }, std::chrono::milliseconds(10)));
}

TEST_CASE("journal round-trips and verifies") {
  auto path = std::filesystem::temp_directory_path() / "eve_test_journal.jsonl";
  {
    Ledger gl(common_channel(), policy(), path.string());
    auto a = Identity::admin(1);
    for (int i = 0; i < 5; ++i) gl.append(rc(a, "k" + std::to_string(i), json{{"i", i}}), a);
    auto disk = read_journal(path.string());
    REQUIRE(disk.size() == 5);
    auto mem = gl.blocks();
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(disk[i].payload == mem[i].payload);
      CHECK(block_digest(disk[i]) == block_digest(mem[i]));
    }
    CHECK(verify_chain(disk).ok);
    CHECK(disk[2].tx().value == json{{"i", 2}});
  }
  std::filesystem::remove(path);
  CHECK(code_of([&] { read_journal(path.string()); }) == ErrorCode::IoFailure);
}
