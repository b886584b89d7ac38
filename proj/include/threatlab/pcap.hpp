// Copyright 2026 The threatlab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "threatlab/sim.hpp"

namespace threatlab::pcap {

inline constexpr std::uint32_t magic = 0xa1b2c3d4;
inline constexpr std::uint16_t version_major = 2;
inline constexpr std::uint16_t version_minor = 4;
inline constexpr std::uint32_t snaplen = 65535;
inline constexpr std::uint32_t linktype_ethernet = 1;
inline constexpr std::size_t global_header_size = 24;
inline constexpr std::size_t record_header_size = 16;
inline constexpr std::size_t min_frame_size = 60; // Ethernet minimum without FCS

namespace detail {

// All multi-byte fields are written big-endian so the output is identical on
// every host; readers detect byte order from the magic.
inline void put16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  put16(out, static_cast<std::uint16_t>(v >> 16));
  put16(out, static_cast<std::uint16_t>(v));
}

inline void put_mac(std::vector<std::uint8_t>& out, const std::array<std::uint8_t, 6>& mac) {
  out.insert(out.end(), mac.begin(), mac.end());
}

inline void put_ip(std::vector<std::uint8_t>& out, Ipv4Address ip) {
  const auto o = ip.octets();
  out.insert(out.end(), o.begin(), o.end());
}

/// Synthetic locally administered MAC derived from an address.
inline std::array<std::uint8_t, 6> host_mac(Ipv4Address ip) {
  const auto o = ip.octets();
  return {0x02, 0x00, o[0], o[1], o[2], o[3]};
}

inline std::uint16_t checksum(std::span<const std::uint8_t> bytes, std::uint32_t sum = 0) {
  for (std::size_t i = 0; i + 1 < bytes.size(); i += 2)
    sum += static_cast<std::uint32_t>(bytes[i] << 8 | bytes[i + 1]);
  if (bytes.size() % 2 != 0)
    sum += static_cast<std::uint32_t>(bytes.back() << 8);
  while (sum >> 16)
    sum = (sum & 0xffff) + (sum >> 16);
  return static_cast<std::uint16_t>(~sum);
}

inline std::vector<std::uint8_t> encode_arp(const Frame& f) {
  std::vector<std::uint8_t> pkt;
  put_mac(pkt, {0xff, 0xff, 0xff, 0xff, 0xff, 0xff});
  put_mac(pkt, host_mac(f.src_ip));
  put16(pkt, 0x0806);
  put16(pkt, 1);      // hardware: Ethernet
  put16(pkt, 0x0800); // protocol: IPv4
  pkt.push_back(6);
  pkt.push_back(4);
  put16(pkt, 1); // request
  put_mac(pkt, host_mac(f.src_ip));
  put_ip(pkt, f.src_ip);
  put_mac(pkt, {0, 0, 0, 0, 0, 0});
  put_ip(pkt, f.dst_ip);
  return pkt;
}

inline std::vector<std::uint8_t> encode_tcp(const Frame& f, std::uint32_t seq) {
  std::vector<std::uint8_t> pkt;
  put_mac(pkt, host_mac(f.dst_ip));
  put_mac(pkt, host_mac(f.src_ip));
  put16(pkt, 0x0800);

  const std::size_t ip_at = pkt.size();
  pkt.push_back(0x45); // version 4, 20-byte header
  pkt.push_back(0);
  put16(pkt, 40); // total length: IP + TCP headers
  put16(pkt, static_cast<std::uint16_t>(seq));
  put16(pkt, 0x4000); // don't fragment
  pkt.push_back(64);  // TTL
  pkt.push_back(6);   // TCP
  put16(pkt, 0);
  put_ip(pkt, f.src_ip);
  put_ip(pkt, f.dst_ip);
  const auto ip_sum = checksum({pkt.data() + ip_at, 20});
  pkt[ip_at + 10] = static_cast<std::uint8_t>(ip_sum >> 8);
  pkt[ip_at + 11] = static_cast<std::uint8_t>(ip_sum);

  const std::size_t tcp_at = pkt.size();
  put16(pkt, f.src_port);
  put16(pkt, f.dst_port);
  put32(pkt, f.kind == FrameKind::tcp_syn ? seq : seq + 1000);
  put32(pkt, f.kind == FrameKind::tcp_syn ? 0 : seq + 1);
  pkt.push_back(0x50); // 20-byte header
  pkt.push_back(f.kind == FrameKind::tcp_syn ? 0x02 : 0x12); // SYN or SYN|ACK
  put16(pkt, 64240);
  put16(pkt, 0);
  put16(pkt, 0);
  // pseudo-header: src, dst, zero, protocol, TCP length
  std::uint32_t pseudo = 0;
  for (auto ip : {f.src_ip, f.dst_ip})
    pseudo += (ip.value() >> 16) + (ip.value() & 0xffff);
  pseudo += 6 + 20;
  const auto tcp_sum = checksum({pkt.data() + tcp_at, 20}, pseudo);
  pkt[tcp_at + 16] = static_cast<std::uint8_t>(tcp_sum >> 8);
  pkt[tcp_at + 17] = static_cast<std::uint8_t>(tcp_sum);
  return pkt;
}

} // namespace detail

/// Classic pcap stream: global header, then one Ethernet record per frame.
/// Timestamps count microseconds from zero in frame order.
inline std::vector<std::uint8_t> write_capture(std::span<const Frame> frames) {
  using detail::put16;
  using detail::put32;
  std::vector<std::uint8_t> out;
  out.reserve(global_header_size + frames.size() * (record_header_size + min_frame_size));
  put32(out, magic);
  put16(out, version_major);
  put16(out, version_minor);
  put32(out, 0); // thiszone
  put32(out, 0); // sigfigs
  put32(out, snaplen);
  put32(out, linktype_ethernet);

  std::uint32_t index = 0;
  for (const auto& frame : frames) {
    auto pkt = frame.kind == FrameKind::arp_probe ? detail::encode_arp(frame)
                                                  : detail::encode_tcp(frame, 0x1000 + index);
    if (pkt.size() < min_frame_size)
      pkt.resize(min_frame_size, 0);
    put32(out, index / 1'000'000);
    put32(out, index % 1'000'000);
    put32(out, static_cast<std::uint32_t>(pkt.size()));
    put32(out, static_cast<std::uint32_t>(pkt.size()));
    out.insert(out.end(), pkt.begin(), pkt.end());
    ++index;
  }
  return out;
}

} // namespace threatlab::pcap
