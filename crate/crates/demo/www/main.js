import init, { Site, errorCurve } from "./pkg/sitewalk_demo.js";

const BFH_POINTS = [2, 2, 3.6, 10.5, 8, 13, 16.4, 10.5, 12, 13, 10, 5];

await init();
const site = Site.bfh();
const fiducials = JSON.parse(site.fiducials());
const planCanvas = document.getElementById("plan");
const ctx = planCanvas.getContext("2d");
const scale = Math.min(planCanvas.width / (site.width * site.cellSize), planCanvas.height / (site.height * site.cellSize));
const toPx = (x, y) => [(x - site.originX) * scale, planCanvas.height - (y - site.originY) * scale];
const toWorld = (px, py) => [px / scale + site.originX, (planCanvas.height - py) / scale + site.originY];

const mask = document.createElement("canvas");
mask.width = site.width;
mask.height = site.height;
{
  const m = mask.getContext("2d");
  const img = m.createImageData(site.width, site.height);
  const cells = site.walkableMask();
  for (let r = 0; r < site.height; r++) {
    for (let c = 0; c < site.width; c++) {
      const v = cells[r * site.width + c] ? 235 : 120;
      const o = ((site.height - 1 - r) * site.width + c) * 4;
      img.data.set([v, v, v, 255], o);
    }
  }
  m.putImageData(img, 0, 0);
}

let points = [];
let mission = null;

function draw() {
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, planCanvas.width, planCanvas.height);
  ctx.drawImage(mask, 0, planCanvas.height - site.height * site.cellSize * scale, site.width * site.cellSize * scale, site.height * site.cellSize * scale);
  const range = Number(document.getElementById("range").value);
  for (const f of fiducials) {
    const [x, y] = toPx(f.x, f.y);
    ctx.strokeStyle = "rgba(40,120,200,.35)";
    ctx.beginPath();
    ctx.arc(x, y, range * scale, 0, 2 * Math.PI);
    ctx.stroke();
    ctx.fillStyle = "#2878c8";
    ctx.fillRect(x - 4, y - 4, 8, 8);
  }
  if (mission) {
    ctx.strokeStyle = "#d24";
    ctx.lineWidth = 2;
    ctx.beginPath();
    for (let i = 0; i < mission.waypoints.length; i += 2) {
      const [x, y] = toPx(mission.waypoints[i], mission.waypoints[i + 1]);
      i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
    }
    ctx.stroke();
    ctx.lineWidth = 1;
  }
  points.forEach((v, i) => {
    if (i % 2) return;
    const [x, y] = toPx(points[i], points[i + 1]);
    ctx.fillStyle = "#222";
    ctx.beginPath();
    ctx.arc(x, y, 5, 0, 2 * Math.PI);
    ctx.fill();
    ctx.fillText(`P${i / 2 + 1}`, x + 7, y - 7);
  });
  const [sx, sy] = toPx(Number(document.getElementById("sx").value), Number(document.getElementById("sy").value));
  ctx.strokeStyle = "#090";
  ctx.strokeRect(sx - 6, sy - 6, 12, 12);
}

function replan() {
  const out = document.getElementById("mission");
  const cov = document.getElementById("coverage");
  mission = null;
  cov.textContent = "";
  if (points.length) {
    try {
      const sx = Number(document.getElementById("sx").value);
      const sy = Number(document.getElementById("sy").value);
      mission = JSON.parse(site.plan(sx, sy, new Float64Array(points)));
      out.textContent = `order ${mission.drp_ids.join(" ")}\nlength ${mission.length.toFixed(2)} m\nestimated ${mission.duration.toFixed(0)} s`;
      const range = Number(document.getElementById("range").value);
      const c = JSON.parse(site.coverage(new Float64Array(mission.waypoints), range));
      cov.textContent = c.covered ? "every path sample sees a fiducial" : `${c.gaps.length / 2} gaps, longest ${c.max_gap.toFixed(2)} m`;
    } catch (e) {
      out.textContent = `planning failed: ${e.message ?? e}`;
    }
  } else {
    out.textContent = "no mission yet";
  }
  draw();
}

function drawCurve() {
  const deg = Number(document.getElementById("deg").value);
  document.getElementById("degOut").textContent = deg;
  const c = document.getElementById("curve");
  const g = c.getContext("2d");
  const maxD = 12;
  const ys = errorCurve(maxD, deg, 121);
  const top = Math.max(0.05, errorCurve(maxD, 5, 2)[1]);
  g.clearRect(0, 0, c.width, c.height);
  g.strokeStyle = "#888";
  g.strokeRect(30, 10, c.width - 40, c.height - 40);
  g.fillStyle = "#222";
  g.fillText("0", 22, c.height - 28);
  g.fillText(`${maxD} m`, c.width - 30, c.height - 15);
  g.fillText(`${top.toFixed(2)} m`, 0, 18);
  g.strokeStyle = "#d24";
  g.beginPath();
  ys.forEach((y, i) => {
    const px = 30 + (i / (ys.length - 1)) * (c.width - 40);
    const py = c.height - 30 - (y / top) * (c.height - 40);
    i === 0 ? g.moveTo(px, py) : g.lineTo(px, py);
  });
  g.stroke();
}

planCanvas.addEventListener("click", (ev) => {
  const r = planCanvas.getBoundingClientRect();
  const [x, y] = toWorld(ev.clientX - r.left, ev.clientY - r.top);
  points.push(Number(x.toFixed(2)), Number(y.toFixed(2)));
  replan();
});
document.getElementById("bfh").onclick = () => { points = BFH_POINTS.slice(); replan(); };
document.getElementById("clear").onclick = () => { points = []; replan(); };
for (const id of ["sx", "sy"]) document.getElementById(id).onchange = replan;
document.getElementById("range").oninput = (e) => {
  document.getElementById("rangeOut").textContent = e.target.value;
  replan();
};
document.getElementById("deg").oninput = drawCurve;
replan();
drawCurve();
