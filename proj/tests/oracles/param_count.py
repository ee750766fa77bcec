#!/usr/bin/env python3
# Copyright 2026 The TrusFusion Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Parameter counts from a plain walk over the bottleneck layout.

Written independently of the C++ builder; the numbers it prints are frozen in
tests/test_network.cpp.
"""

import sys


def backbone(in_ch, base, blocks):
    n = in_ch * base * 3 * 7 * 7 + 2 * base
    c = base
    for s, count in enumerate(blocks):
        w = base * 2 ** s
        for b in range(count):
            n += c * w + 2 * w
            n += w * w * 27 + 2 * w
            n += w * 4 * w + 2 * 4 * w
            if b == 0:
                n += c * 4 * w + 2 * 4 * w
            c = 4 * w
    return n, c


def model(width, in_ch=3, blocks=(3, 4, 6, 3), layout="dual"):
    base = max(1, round(64 * width))
    if layout == "dual":
        one, out = backbone(in_ch, base, blocks)
        n = 2 * one
        for s in range(4):
            c = 4 * base * 2 ** s
            n += 2 * (2 * c) + 2 + 4
    elif layout == "concat":
        n, out = backbone(2 * in_ch, base, blocks)
    else:
        n, out = backbone(in_ch, base, blocks)
    return n + 2 * out + 2


if __name__ == "__main__":
    cases = [
        ("dual w0.25 c1", model(0.25, 1)),
        ("dual w0.25 c3", model(0.25, 3)),
        ("single w0.25 c1", model(0.25, 1, layout="single")),
        ("concat w0.25 c1", model(0.25, 1, layout="concat")),
        ("dual w1.0 c3", model(1.0, 3)),
        ("single w1.0 c3", model(1.0, 3, layout="single")),
        ("dual w0.125 c1 [1,1,1,1]", model(0.125, 1, blocks=(1, 1, 1, 1))),
    ]
    for name, n in cases:
        print(f"{name}: {n}")
    sys.exit(0)
