// SPDX-License-Identifier: Apache-2.0
#include "mpfm/model_io.hpp"

#include "mpfm/error.hpp"

namespace mpfm {

bool operator==(const ModelBundle& a, const ModelBundle& b) {
  const auto& pa = a.flow.prototype;
  const auto& pb = b.flow.prototype;
  return a.flow.velocity_net == b.flow.velocity_net && a.flow.psi_steps == b.flow.psi_steps &&
         a.flow.one_step_psi == b.flow.one_step_psi && pa.weights == pb.weights && pa.means == pb.means &&
         pa.shared_std == pb.shared_std && a.heads == b.heads && a.scoring.top_fraction == b.scoring.top_fraction &&
         a.scoring.pooling == b.scoring.pooling;
}

Snapshot to_snapshot(const ModelBundle& bundle) {
  Snapshot snap;
  snap.add("VNET", encode_mlp(bundle.flow.velocity_net));

  ByteWriter proto;
  const GMPrototype& p = bundle.flow.prototype;
  proto.u64(p.weights.size());
  proto.f64s(p.weights);
  proto.tensor(p.means);
  proto.f64(p.shared_std);
  snap.add("PROT", proto.take());

  ByteWriter flow;
  flow.u64(bundle.flow.psi_steps);
  flow.u32(bundle.flow.one_step_psi ? 1 : 0);
  snap.add("FLOW", flow.take());

  snap.add("HEDA", encode_mlp(bundle.heads.head_a));
  snap.add("HEDN", encode_mlp(bundle.heads.head_n));
  snap.add("HEDR", encode_mlp(bundle.heads.head_r));

  ByteWriter calib;
  calib.f64(bundle.heads.gain);
  calib.f64(bundle.heads.bias);
  snap.add("CALG", calib.take());

  ByteWriter meta;
  meta.f64(bundle.scoring.top_fraction);
  meta.str(to_string(bundle.scoring.pooling));
  snap.add("META", meta.take());
  return snap;
}

ModelBundle from_snapshot(const Snapshot& snap) {
  ModelBundle b;
  b.flow.velocity_net = decode_mlp(snap.get("VNET").payload);

  ByteReader proto(snap.get("PROT").payload, "PROT section");
  const std::uint64_t k = proto.u64();
  std::vector<double> weights = proto.f64s(k);
  Tensor means = proto.tensor();
  const double s = proto.f64();
  proto.expect_done();
  b.flow.prototype = GMPrototype{std::move(weights), std::move(means), s};

  ByteReader flow(snap.get("FLOW").payload, "FLOW section");
  b.flow.psi_steps = flow.u64();
  b.flow.one_step_psi = flow.u32() != 0;
  flow.expect_done();

  b.heads.head_a = decode_mlp(snap.get("HEDA").payload);
  b.heads.head_n = decode_mlp(snap.get("HEDN").payload);
  b.heads.head_r = decode_mlp(snap.get("HEDR").payload);
  ByteReader calib(snap.get("CALG").payload, "CALG section");
  b.heads.gain = calib.f64();
  b.heads.bias = calib.f64();
  calib.expect_done();

  ByteReader meta(snap.get("META").payload, "META section");
  b.scoring.top_fraction = meta.f64();
  try {
    b.scoring.pooling = pooling_from_string(meta.str());
  } catch (const InvalidInput& e) {
    throw FormatVersionError(std::string("META section: ") + e.what());
  }
  meta.expect_done();

  try {
    b.flow.validate();
  } catch (const InvalidInput& e) {
    throw FormatVersionError(std::string("inconsistent model snapshot: ") + e.what());
  }
  return b;
}

void save_model(const ModelBundle& bundle, const std::filesystem::path& path) { to_snapshot(bundle).save(path); }

ModelBundle load_model(const std::filesystem::path& path) { return from_snapshot(Snapshot::load(path)); }

}  // namespace mpfm
