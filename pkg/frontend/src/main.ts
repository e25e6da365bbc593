// DOM wiring: renders the view model and polls every 10 seconds (push is
// pointless at LoRa latencies). All state lives in the view model.

import { ApiClient } from "./api.js";
import { ConsoleViewModel, flagNames } from "./viewmodel.js";
import { dailyChartSvg, weightChartSvg } from "./chart.js";

const POLL_MS = 10_000;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function fmtAge(seconds: number | null): string {
  if (seconds === null) return "never";
  if (seconds < 90) return `${seconds}s ago`;
  if (seconds < 5400) return `${Math.round(seconds / 60)}m ago`;
  return `${Math.round(seconds / 3600)}h ago`;
}

function render(vm: ConsoleViewModel): void {
  const s = vm.state;
  el("banner").textContent = s.banner ?? "";
  el("banner").className = s.banner ? "banner error" : "banner";
  document.body.classList.toggle("stale", s.stale);

  el("stations").innerHTML = s.stations
    .map((st) => {
      const flags = flagNames(st.error_flags);
      return (
        `<tr><td>${st.station_id}</td>` +
        `<td>${fmtAge(vm.statusAge(st))}</td>` +
        `<td>${st.temp_in_c ?? "-"} / ${st.temp_out_c ?? "-"} C</td>` +
        `<td>${st.rh_in_pct ?? "-"} / ${st.rh_out_pct ?? "-"} %</td>` +
        `<td class="${flags.length ? "flags" : ""}">${flags.join(", ") || "ok"}</td></tr>`
      );
    })
    .join("");

  el("visits").innerHTML = s.visits
    .map(
      (v) =>
        `<tr><td>${v.station_id}</td><td>${v.tag ?? "untagged"}</td>` +
        `<td>${new Date(v.entry_ts * 1000).toISOString()}</td>` +
        `<td>${(v.exit_ts - v.entry_ts).toFixed(0)}s</td>` +
        `<td>${v.weight_g.toFixed(1)}</td><td>${v.std_g.toFixed(1)}</td></tr>`,
    )
    .join("");
  (el<HTMLButtonElement>("more")).disabled = s.nextCursor === null;

  el("chart").innerHTML = weightChartSvg(s.series);
  el("daily-chart").innerHTML = dailyChartSvg(s.daily);

  el("targets").innerHTML = s.targets.map((t) => `<li>${t}</li>`).join("");
  (el<HTMLInputElement>("master")).checked = s.master;
  el("pending").innerHTML = vm
    .pendingForStation()
    .map((op) => `<li>${op.kind} ${op.tag} (waiting for station sync)</li>`)
    .join("");
  el("tag-error").textContent = s.tagError ?? "";
  el("master-confirm").hidden = !s.masterConfirmArmed;

  el("alerts").innerHTML = s.alerts
    .map(
      (a) =>
        `<li class="alert">captured ${a.tag ?? "untagged animal"} at station ` +
        `${a.station_id}, ${new Date(a.ts * 1000).toISOString()}</li>`,
    )
    .join("");
}

async function boot(): Promise<void> {
  const token =
    new URLSearchParams(location.search).get("token") ?? "let-me-feed";
  const api = new ApiClient("", token);
  const vm = new ConsoleViewModel(api);

  el("filter-form").addEventListener("submit", async (ev) => {
    ev.preventDefault();
    const tag = (el<HTMLInputElement>("f-tag")).value.trim();
    await vm.refreshVisits({
      tag: tag || undefined,
      wmin: numOr(el<HTMLInputElement>("f-wmin").value),
      wmax: numOr(el<HTMLInputElement>("f-wmax").value),
    });
    await vm.refreshDaily();
    render(vm);
  });
  el("more").addEventListener("click", async () => {
    await vm.loadMoreVisits();
    render(vm);
  });
  el("add-target").addEventListener("click", async () => {
    await vm.submitTargetEdit("add", el<HTMLInputElement>("t-tag").value.trim());
    render(vm);
  });
  el("remove-target").addEventListener("click", async () => {
    await vm.submitTargetEdit("remove", el<HTMLInputElement>("t-tag").value.trim());
    render(vm);
  });
  el("master").addEventListener("click", async (ev) => {
    ev.preventDefault();
    await vm.toggleMaster(!(el<HTMLInputElement>("master")).checked === false);
    render(vm);
  });
  el("master-yes").addEventListener("click", async () => {
    await vm.toggleMaster((el<HTMLInputElement>("master")).checked === false);
    render(vm);
  });
  el("master-no").addEventListener("click", () => {
    vm.cancelMasterConfirm();
    render(vm);
  });

  await vm.refreshAll();
  render(vm);
  setInterval(async () => {
    await vm.refreshAll();
    render(vm);
  }, POLL_MS);
}

function numOr(text: string): number | undefined {
  return text.trim() === "" ? undefined : Number(text);
}

boot();
