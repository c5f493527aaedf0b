import init, * as awmi from "./pkg/awmi_demo.js";

const SIZE = 256;
const $ = (id) => document.getElementById(id);
let source = null;
let warped = null;

function draw(id, rgba) {
  const c = $(id);
  c.width = SIZE;
  c.height = SIZE;
  c.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), SIZE, SIZE), 0, 0);
}

function status(msg) {
  $("status").textContent = msg;
}

// Defers work one frame so the status text is painted first.
function busy(msg, f) {
  status(msg);
  setTimeout(() => {
    const t0 = performance.now();
    try {
      f();
      status(`done in ${(performance.now() - t0).toFixed(0)} ms`);
    } catch (e) {
      status(`error: ${e.message ?? e}`);
    }
  }, 20);
}

const kernel = () => $("kernel").value;

function heatmaps() {
  const which = Number($("adi").value);
  if (source) draw("heat-src", awmi.adi_heatmap(source, SIZE, SIZE, which, kernel()));
  if (warped) draw("heat-dst", awmi.adi_heatmap(warped, SIZE, SIZE, which, kernel()));
}

function fmt(v) {
  return v === null || v === undefined ? "undefined" : v.toExponential(4);
}

function table(rows) {
  const head = "<tr><th>invariant</th><th>source</th><th>warped</th><th>error %</th></tr>";
  $("table").innerHTML = head + rows
    .map((r) => `<tr><td>${r.id}</td><td>${fmt(r.a)}</td><td>${fmt(r.b)}</td>` +
      `<td>${r.error_pct === null ? "-" : r.error_pct.toFixed(3)}</td></tr>`)
    .join("");
}

function setSource(pixels) {
  source = pixels;
  warped = null;
  draw("src", awmi.gray_rgba(source));
  for (const id of ["dst", "heat-dst"]) $(id).getContext("2d").clearRect(0, 0, SIZE, SIZE);
  $("table").innerHTML = "";
  heatmaps();
}

function apply() {
  const params = ["a11", "a12", "a21", "a22", "t1", "t2"].map((k) => Number($(k).value));
  warped = awmi.warp(source, SIZE, SIZE, new Float64Array(params), $("recenter").checked);
  draw("dst", awmi.gray_rgba(warped));
  heatmaps();
  table(JSON.parse(awmi.compare(source, warped, SIZE, SIZE, kernel())));
}

function loadFile(file) {
  const img = new Image();
  img.onload = () => {
    const c = document.createElement("canvas");
    c.width = SIZE;
    c.height = SIZE;
    const ctx = c.getContext("2d");
    ctx.fillStyle = "black";
    ctx.fillRect(0, 0, SIZE, SIZE);
    // Fit into the middle half so warps keep the content in frame.
    const s = (SIZE / 2) / Math.max(img.width, img.height);
    const w = img.width * s;
    const h = img.height * s;
    ctx.drawImage(img, (SIZE - w) / 2, (SIZE - h) / 2, w, h);
    busy("computing…", () => setSource(awmi.luminance(ctx.getImageData(0, 0, SIZE, SIZE).data)));
    URL.revokeObjectURL(img.src);
  };
  img.src = URL.createObjectURL(file);
}

await init();
$("gen").onclick = () =>
  busy("computing…", () => setSource(awmi.synth($("kind").value, SIZE, BigInt($("seed").value))));
$("file").onchange = (e) => e.target.files[0] && loadFile(e.target.files[0]);
$("apply").onclick = () => source && busy("warping…", apply);
$("adi").onchange = () => busy("computing…", heatmaps);
$("kernel").onchange = () => busy("computing…", () => { heatmaps(); if (warped) apply(); });
busy("computing…", () => setSource(awmi.synth("blobs", SIZE, 0n)));
