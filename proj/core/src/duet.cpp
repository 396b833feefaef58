#include "sesoffer/duet.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <condition_variable>
#include <deque>
#include <fstream>
#include <future>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace sesoffer {

using nlohmann::json;

// ---------------------------------------------------------------------------
// codec

namespace {

json vec_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vec_from_json(const json& a) {
  Eigen::VectorXd v(a.size());
  for (size_t i = 0; i < a.size(); ++i) v[i] = a[i].get<double>();
  return v;
}

void check_fields(const json& j, const std::set<std::string>& allowed) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw SchemaError(it.key());
}

}  // namespace

std::string encode_agg_share(const AggShare& s) {
  json j;
  j["kind"] = "offer_scheme";
  j["iter"] = s.iter;
  j["p_g"] = vec_to_json(s.p_g);
  j["lease_net"] = vec_to_json(s.lease_net);
  j["lease_ch"] = vec_to_json(s.lease_ch);
  j["lease_dis"] = vec_to_json(s.lease_dis);
  j["e_cap_req"] = s.e_cap_req;
  j["p_cap_req"] = s.p_cap_req;
  j["nsor_lo"] = vec_to_json(s.nsor_lo);
  j["nsor_hi"] = vec_to_json(s.nsor_hi);
  j["phi"] = vec_to_json(s.phi);
  j["pi"] = vec_to_json(s.pi);
  return j.dump();
}

AggShare decode_agg_share(const std::string& payload) {
  json j = json::parse(payload);
  check_fields(j, {"kind", "iter", "p_g", "lease_net", "lease_ch",
                   "lease_dis", "e_cap_req", "p_cap_req", "nsor_lo",
                   "nsor_hi", "phi", "pi"});
  AggShare s;
  s.iter = j.at("iter").get<int>();
  s.p_g = vec_from_json(j.at("p_g"));
  s.lease_net = vec_from_json(j.at("lease_net"));
  s.lease_ch = vec_from_json(j.at("lease_ch"));
  s.lease_dis = vec_from_json(j.at("lease_dis"));
  s.e_cap_req = j.at("e_cap_req").get<double>();
  s.p_cap_req = j.at("p_cap_req").get<double>();
  s.nsor_lo = vec_from_json(j.at("nsor_lo"));
  s.nsor_hi = vec_from_json(j.at("nsor_hi"));
  s.phi = vec_from_json(j.at("phi"));
  s.pi = vec_from_json(j.at("pi"));
  return s;
}

std::string encode_util_share(const UtilShare& s) {
  json j;
  j["kind"] = "service_reply";
  j["iter"] = s.iter;
  j["net_discharge"] = vec_to_json(s.net_discharge);
  j["p_market"] = vec_to_json(s.p_market);
  j["security_status"] = s.security_status;
  j["violation_bus"] = s.violation_bus;
  j["violation_t"] = s.violation_t;
  j["violation_corner"] = s.violation_corner;
  j["lambda_e"] = s.lambda_e;
  j["lambda_p"] = s.lambda_p;
  j["envelope_lo"] = vec_to_json(s.envelope_lo);
  j["envelope_hi"] = vec_to_json(s.envelope_hi);
  return j.dump();
}

UtilShare decode_util_share(const std::string& payload) {
  json j = json::parse(payload);
  check_fields(j, {"kind", "iter", "net_discharge", "p_market",
                   "security_status", "violation_bus", "violation_t",
                   "violation_corner", "lambda_e", "lambda_p", "envelope_lo",
                   "envelope_hi"});
  UtilShare s;
  s.iter = j.at("iter").get<int>();
  s.net_discharge = vec_from_json(j.at("net_discharge"));
  s.p_market = vec_from_json(j.at("p_market"));
  s.security_status = j.at("security_status").get<std::string>();
  s.violation_bus = j.at("violation_bus").get<int>();
  s.violation_t = j.at("violation_t").get<int>();
  s.violation_corner = j.at("violation_corner").get<std::string>();
  s.lambda_e = j.at("lambda_e").get<double>();
  s.lambda_p = j.at("lambda_p").get<double>();
  s.envelope_lo = vec_from_json(j.at("envelope_lo"));
  s.envelope_hi = vec_from_json(j.at("envelope_hi"));
  return s;
}

// ---------------------------------------------------------------------------
// transports

namespace {

class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(const std::string& payload) = 0;
  virtual std::string recv() = 0;
};

struct ByteQueue {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::string> items;

  void push(std::string s) {
    {
      std::lock_guard<std::mutex> lock(mu);
      items.push_back(std::move(s));
    }
    cv.notify_one();
  }
  std::string pop() {
    std::unique_lock<std::mutex> lock(mu);
    cv.wait(lock, [&] { return !items.empty(); });
    std::string s = std::move(items.front());
    items.pop_front();
    return s;
  }
};

std::string frame(const std::string& payload) {
  return std::to_string(payload.size()) + " " + payload + "\n";
}

std::string unframe(const std::string& framed) {
  auto sp = framed.find(' ');
  if (sp == std::string::npos)
    throw std::runtime_error("malformed frame: missing length prefix");
  size_t len = std::stoul(framed.substr(0, sp));
  if (framed.size() < sp + 1 + len)
    throw std::runtime_error("malformed frame: truncated payload");
  return framed.substr(sp + 1, len);
}

/// Paired in-memory byte channels; frames round-trip through the same
/// encoding the socket uses so transcripts are transport-independent.
class InProcessTransport : public Transport {
 public:
  InProcessTransport(std::shared_ptr<ByteQueue> out,
                     std::shared_ptr<ByteQueue> in)
      : out_(std::move(out)), in_(std::move(in)) {}
  void send(const std::string& payload) override {
    out_->push(frame(payload));
  }
  std::string recv() override { return unframe(in_->pop()); }

 private:
  std::shared_ptr<ByteQueue> out_;
  std::shared_ptr<ByteQueue> in_;
};

class SocketTransport : public Transport {
 public:
  explicit SocketTransport(int fd) : fd_(fd) {}
  ~SocketTransport() override {
    if (fd_ >= 0) ::close(fd_);
  }
  void send(const std::string& payload) override {
    std::string framed = frame(payload);
    size_t off = 0;
    while (off < framed.size()) {
      ssize_t n = ::write(fd_, framed.data() + off, framed.size() - off);
      if (n <= 0) throw std::runtime_error("socket write failed");
      off += static_cast<size_t>(n);
    }
  }
  std::string recv() override {
    std::string header;
    char c;
    while (true) {
      read_exact(&c, 1);
      if (c == ' ') break;
      if (!isdigit(static_cast<unsigned char>(c)))
        throw std::runtime_error("malformed frame header");
      header.push_back(c);
    }
    size_t len = std::stoul(header);
    std::string payload(len, '\0');
    read_exact(payload.data(), len);
    read_exact(&c, 1);  // trailing newline
    return payload;
  }

 private:
  void read_exact(char* buf, size_t n) {
    size_t off = 0;
    while (off < n) {
      ssize_t r = ::read(fd_, buf + off, n - off);
      if (r <= 0) throw std::runtime_error("socket read failed");
      off += static_cast<size_t>(r);
    }
  }
  int fd_;
};

struct SocketPairEnds {
  int agg_fd = -1;
  int util_fd = -1;
};

SocketPairEnds make_loopback_pair() {
  int server = ::socket(AF_INET, SOCK_STREAM, 0);
  if (server < 0) throw std::runtime_error("socket() failed");
  int one = 1;
  ::setsockopt(server, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  if (::bind(server, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 ||
      ::listen(server, 1) < 0) {
    ::close(server);
    throw std::runtime_error("bind/listen on loopback failed");
  }
  socklen_t alen = sizeof(addr);
  ::getsockname(server, reinterpret_cast<sockaddr*>(&addr), &alen);

  int client = ::socket(AF_INET, SOCK_STREAM, 0);
  if (client < 0) {
    ::close(server);
    throw std::runtime_error("socket() failed");
  }
  if (::connect(client, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) <
      0) {
    ::close(server);
    ::close(client);
    throw std::runtime_error("connect to loopback failed");
  }
  int accepted = ::accept(server, nullptr, nullptr);
  ::close(server);
  if (accepted < 0) {
    ::close(client);
    throw std::runtime_error("accept failed");
  }
  return {client, accepted};
}

}  // namespace

// ---------------------------------------------------------------------------
// duet run

void Transcript::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  for (const auto& r : records)
    os << (r.dir == TranscriptRecord::Dir::kAggToUtil ? "AGG->UTIL"
                                                      : "UTIL->AGG")
       << ' ' << r.iter << ' ' << r.payload.size() << ' ' << r.payload
       << '\n';
}

namespace {

void utility_loop(std::shared_ptr<Transport> transport,
                  const ProblemInstance& inst, const AdmmOptions& opts,
                  std::promise<UtilityDecision>& out) {
  try {
    UtilityAgent util(inst.utility, inst.lease, inst.horizon,
                      inst.aggregators[0].portfolio.delivery_shares, opts);
    double leased_e = 0.0, leased_p = 0.0, om_income = 0.0;
    while (true) {
      std::string payload = transport->recv();
      json j = json::parse(payload);
      std::string kind = j.at("kind").get<std::string>();
      if (kind == "hello") {
        transport->send(encode_util_share(util.init()));
      } else if (kind == "offer_scheme") {
        AggShare share = decode_agg_share(payload);
        UtilShare reply = util.step(share);
        leased_e = share.e_cap_req;
        leased_p = share.p_cap_req;
        om_income = inst.lease.c_om *
                    (share.lease_ch.sum() + share.lease_dis.sum());
        transport->send(encode_util_share(reply));
      } else if (kind == "done") {
        out.set_value(util.decision(leased_e, leased_p, om_income));
        return;
      } else {
        throw SchemaError(kind);
      }
    }
  } catch (const std::exception& e) {
    // unblock the counterpart before surfacing the failure
    try {
      transport->send(json{{"kind", "abort"}, {"reason", e.what()}}.dump());
    } catch (...) {
    }
    out.set_exception(std::current_exception());
  } catch (...) {
    out.set_exception(std::current_exception());
  }
}

}  // namespace

DuetResult run_duet(const ProblemInstance& inst, const AdmmOptions& opts,
                    TransportKind kind) {
  if (inst.aggregators.size() != 1)
    throw std::invalid_argument("duet runs exactly one aggregator");
  DuetResult out;
  Transcript& transcript = out.transcript;

  std::shared_ptr<Transport> agg_end, util_end;
  if (kind == TransportKind::kInProcess) {
    auto a2u = std::make_shared<ByteQueue>();
    auto u2a = std::make_shared<ByteQueue>();
    agg_end = std::make_shared<InProcessTransport>(a2u, u2a);
    util_end = std::make_shared<InProcessTransport>(u2a, a2u);
  } else {
    SocketPairEnds ends = make_loopback_pair();
    agg_end = std::make_shared<SocketTransport>(ends.agg_fd);
    util_end = std::make_shared<SocketTransport>(ends.util_fd);
  }

  std::promise<UtilityDecision> util_promise;
  std::future<UtilityDecision> util_future = util_promise.get_future();
  std::thread util_thread([util_end, &inst, &opts, &util_promise] {
    utility_loop(util_end, inst, opts, util_promise);
  });

  auto send_logged = [&](const std::string& payload, int iter) {
    transcript.records.push_back(
        {TranscriptRecord::Dir::kAggToUtil, iter, payload});
    agg_end->send(payload);
  };
  auto recv_logged = [&](int iter) {
    std::string payload = agg_end->recv();
    transcript.records.push_back(
        {TranscriptRecord::Dir::kUtilToAgg, iter, payload});
    json j = json::parse(payload, nullptr, false);
    if (!j.is_discarded() && j.is_object() && j.contains("kind") &&
        j["kind"] == "abort")
      throw std::runtime_error("counterpart aborted: " +
                               j.value("reason", std::string("unknown")));
    return payload;
  };

  EquilibriumResult& res = out.result;
  try {
    AggregatorAgent agg(inst.aggregators[0], inst.lease, inst.horizon, opts);
    send_logged(json{{"kind", "hello"}}.dump(), -1);
    UtilShare ushare = decode_util_share(recv_logged(-1));
    agg.receive_init(ushare);
    res.envelope.lo = ushare.envelope_lo;
    res.envelope.hi = ushare.envelope_hi;

    for (int k = 0; k < opts.k_max; ++k) {
      AggShare ashare = agg.step(k, ushare);
      send_logged(encode_agg_share(ashare), k);
      ushare = decode_util_share(recv_logged(k));
      auto conv = agg.update_duals(ushare);

      IterationRecord rec;
      rec.k = k;
      rec.r_norm = conv.r_norm;
      rec.s_norm = conv.s_norm;
      rec.gap_award = conv.gap_award.norm();
      rec.gap_balance = conv.gap_balance.norm();
      AggregatorDecision ad = agg.decision(ushare.lambda_e, ushare.lambda_p);
      rec.agg_profit = ad.profit();
      res.log.push_back(rec);
      res.iterations = k + 1;
      if (conv.converged && k >= 1) {
        res.status = EquilibriumResult::Status::kConverged;
        break;
      }
    }
    send_logged(json{{"kind", "done"}}.dump(), res.iterations);
    res.util = util_future.get();
    util_thread.join();

    AggregatorDecision ad = agg.decision(res.util.lambda_e, res.util.lambda_p);
    res.agg.push_back(ad);
    res.phi = agg.phi();
    res.pi = agg.pi();
    res.lambda_e = res.util.lambda_e;
    res.lambda_p = res.util.lambda_p;
    res.combined_objective = combined_objective_value(res.agg, res.util);
    res.agg_profit = ad.profit();
    res.util_profit = res.util.profit();
    for (auto& rec : res.log) rec.util_profit = res.util_profit;
  } catch (const std::exception& e) {
    if (util_thread.joinable()) {
      try {
        agg_end->send(json{{"kind", "done"}}.dump());
      } catch (...) {
      }
      util_thread.detach();
    }
    res.status = EquilibriumResult::Status::kInfeasible;
    res.message = e.what();
  }
  return out;
}

// ---------------------------------------------------------------------------
// privacy audit

const std::vector<std::string>& default_privacy_registry() {
  static const std::vector<std::string> registry = {
      "branch",     "impedance", "resistance", "reactance", "topology",
      "inj",        "injection", "background", "der",       "unit",
      "alpha",      "offer",     "pair",       "cost",      "limit",
      "demand",     "pv",        "share",      "feeder",    "omega",
      "r",          "x"};
  return registry;
}

namespace {

void scan_keys(const json& j, const std::vector<std::string>& forbidden,
               int record, std::vector<AuditHit>& hits) {
  if (!j.is_object()) return;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    std::vector<std::string> tokens;
    std::string cur;
    for (char c : key) {
      if (c == '_') {
        if (!cur.empty()) tokens.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) tokens.push_back(cur);
    for (const auto& bad : forbidden) {
      bool hit = key == bad;
      for (const auto& tok : tokens) hit = hit || tok == bad;
      if (hit) {
        hits.push_back({record, key});
        break;
      }
    }
    scan_keys(it.value(), forbidden, record, hits);
  }
}

}  // namespace

AuditReport audit_privacy(const Transcript& transcript,
                          const std::vector<std::string>& forbidden) {
  AuditReport report;
  report.records_scanned = static_cast<int>(transcript.records.size());
  for (size_t i = 0; i < transcript.records.size(); ++i) {
    json j = json::parse(transcript.records[i].payload, nullptr,
                         /*allow_exceptions=*/false);
    if (j.is_discarded()) continue;
    scan_keys(j, forbidden, static_cast<int>(i), report.hits);
  }
  return report;
}

}  // namespace sesoffer
