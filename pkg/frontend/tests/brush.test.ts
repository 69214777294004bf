import { describe, expect, it } from "vitest";

import { ApiError, DeltaforgeClient, type LabelSample } from "../src/api.js";
import { brushCells, postLabelBatch, strokeToCells } from "../src/brush.js";
import { Viewport } from "../src/viewport.js";

const BOUNDS = { width: 32, height: 32 };

describe("brushCells", () => {
  it("size 1 is a single pixel", () => {
    expect(brushCells({ row: 5, col: 7 }, 1)).toEqual([{ row: 5, col: 7 }]);
  });

  it("size 3 is a plus-shaped neighborhood", () => {
    const cells = brushCells({ row: 0, col: 0 }, 3);
    const keys = new Set(cells.map((c) => `${c.row},${c.col}`));
    expect(keys).toEqual(
      new Set(["0,0", "-1,0", "1,0", "0,-1", "0,1"]),
    );
  });

  it("grows monotonically with size", () => {
    let prev = 0;
    for (let size = 1; size <= 9; size++) {
      const n = brushCells({ row: 0, col: 0 }, size).length;
      expect(n).toBeGreaterThanOrEqual(prev);
      prev = n;
    }
  });

  it("rejects invalid sizes", () => {
    expect(() => brushCells({ row: 0, col: 0 }, 0)).toThrow(RangeError);
  });
});

describe("strokeToCells", () => {
  it("a click with brush 1 paints exactly one pixel", () => {
    const vp = new Viewport(10); // pixel (2,3) spans screen x 30..40, y 20..30
    const cells = strokeToCells([{ x: 35, y: 25 }], vp, 1, BOUNDS);
    expect(cells).toEqual([{ row: 2, col: 3 }]);
  });

  it("a fast drag leaves no gaps along the path", () => {
    const vp = new Viewport(4);
    // two far-apart samples on one row: every pixel between must be painted
    const cells = strokeToCells(
      [{ x: 2, y: 10 }, { x: 118, y: 10 }],
      vp,
      1,
      BOUNDS,
    );
    const cols = cells.map((c) => c.col).sort((a, b) => a - b);
    expect(cols).toEqual(Array.from({ length: 30 }, (_, i) => i));
    expect(new Set(cells.map((c) => c.row))).toEqual(new Set([2]));
  });

  it("deduplicates pixels and clips to the raster bounds", () => {
    const vp = new Viewport(1);
    const path = [
      { x: -5, y: 0.5 },
      { x: 3.5, y: 0.5 },
      { x: -5, y: 0.5 }, // back over the same pixels
    ];
    const cells = strokeToCells(path, vp, 1, BOUNDS);
    const keys = cells.map((c) => `${c.row},${c.col}`);
    expect(new Set(keys).size).toBe(keys.length);
    expect(cells.every((c) => c.col >= 0 && c.col < 32)).toBe(true);
  });
});

class ScriptedTransport {
  calls: { body: LabelSample[] }[] = [];
  constructor(private readonly rejects: Map<string, string>) {}

  fetch = async (input: string, init?: RequestInit): Promise<Response> => {
    void input;
    const body = JSON.parse(String(init?.body)) as { samples: LabelSample[] };
    this.calls.push({ body: body.samples });
    for (const s of body.samples) {
      const detail = this.rejects.get(`${s.row},${s.col}`);
      if (detail) {
        return new Response(JSON.stringify({ detail }), { status: 400 });
      }
    }
    const totals: Record<string, number> = {};
    for (const s of body.samples) {
      totals[String(s.class)] = (totals[String(s.class)] ?? 0) + 1;
    }
    return new Response(JSON.stringify({ totals }), { status: 200 });
  };
}

describe("postLabelBatch", () => {
  const samples: LabelSample[] = [
    { row: 0, col: 0, class: 1 },
    { row: 0, col: 1, class: 1 },
    { row: 1, col: 0, class: 2 },
  ];

  it("posts a clean batch once", async () => {
    const transport = new ScriptedTransport(new Map());
    const client = new DeltaforgeClient("http://x", transport.fetch);
    const result = await postLabelBatch(client, "s1", samples);
    expect(transport.calls).toHaveLength(1);
    expect(result.totals).toEqual({ "1": 2, "2": 1 });
    expect(result.skipped).toEqual([]);
  });

  it("skips nodata pixels with a notice and retries the rest", async () => {
    const transport = new ScriptedTransport(
      new Map([["0,1", "pixel (0,1) is nodata"]]),
    );
    const client = new DeltaforgeClient("http://x", transport.fetch);
    const result = await postLabelBatch(client, "s1", samples);
    expect(result.skipped).toEqual(["pixel (0,1) is nodata"]);
    expect(result.posted).toEqual([samples[0], samples[2]]);
    expect(result.totals).toEqual({ "1": 1, "2": 1 });
  });

  it("surfaces rejections that name no pixel", async () => {
    const transport = new ScriptedTransport(
      new Map([["0,0", "class 9 not in palette (0,0)"]]),
    );
    // a detail without a pixel reference must propagate
    const raw = async () =>
      new Response(JSON.stringify({ detail: "malformed request" }), {
        status: 400,
      });
    const client = new DeltaforgeClient("http://x", raw);
    await expect(postLabelBatch(client, "s1", samples)).rejects.toThrow(ApiError);
    void transport;
  });
});
