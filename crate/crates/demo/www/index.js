import init, { brandMatches, rankCorrelation, fuseAndRank } from "./pkg/lookmatch_demo.js";

const $ = (id) => document.getElementById(id);

function table(head, rows, rowClass = () => "") {
  const th = head.map((h) => `<th>${h}</th>`).join("");
  const body = rows
    .map((r, i) => `<tr class="${rowClass(i)}">${r.map((c) => `<td>${c}</td>`).join("")}</tr>`)
    .join("");
  return `<table><tr>${th}</tr>${body}</table>`;
}

function guarded(out, f) {
  try {
    out.innerHTML = f();
  } catch (e) {
    out.innerHTML = `<p class="err">${e.message ?? e}</p>`;
  }
}

function renderBrands() {
  guarded($("brand-out"), () => {
    const r = JSON.parse(brandMatches($("brand-query").value, $("brand-gallery").value, Number($("brand-threshold").value)));
    return table(
      ["brand", "similarity", "kept"],
      r.rows.map((x) => [x.brand || "<em>(empty)</em>", x.similarity.toFixed(2), x.kept ? "yes" : "no"]),
      (i) => (r.rows[i].kept ? "kept" : ""),
    );
  });
}

function renderCorr() {
  guarded($("corr-out"), () => {
    const r = JSON.parse(rankCorrelation($("corr-in").value));
    return table(["", ...r.models], r.models.map((m, i) => [m, ...r.cells[i]])) + `<p>${r.pairs} aligned pairs</p>`;
  });
}

function renderFuse() {
  guarded($("fuse-out"), () => {
    const r = JSON.parse(fuseAndRank($("fuse-in").value, Number($("fuse-support").value)));
    const stats = table(["model", "mu", "sigma"], r.stats.map((s) => [s.model, s.mu.toFixed(4), s.sigma.toFixed(4)]));
    const rows = table(["rank", "query", "gallery", "fused z", "tier"], r.rows.map((x) => [x.rank, x.query, x.gallery, x.score.toFixed(3), x.tier]));
    return stats + rows + `<p>${r.fused_pairs} pairs with enough support</p>`;
  });
}

await init();
for (const id of ["brand-query", "brand-gallery", "brand-threshold"]) $(id).addEventListener("input", renderBrands);
$("corr-in").addEventListener("input", renderCorr);
for (const id of ["fuse-in", "fuse-support"]) $(id).addEventListener("input", renderFuse);
renderBrands();
renderCorr();
renderFuse();
