/** Typed client for the annotation service API.
 *
 * Mutating calls go through a single-writer queue: at most one POST/DELETE
 * is in flight at a time, matching the server's per-database write lock.
 */

export interface ImageInfo {
  id: string;
  width: number;
  height: number;
}

export interface KeypointEntry {
  label: string;
  image_id: string;
  u: number;
  v: number;
}

export interface DbDocument {
  name: string;
  dim: number;
  entries: (KeypointEntry & { descriptor: number[] })[];
}

export interface HeatmapPeak {
  u: number;
  v: number;
  value: number;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`${status}: ${detail}`);
  }
}

type Fetch = typeof fetch;

async function asJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = (await resp.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export class ApiClient {
  private queue: Promise<unknown> = Promise.resolve();

  constructor(
    private doFetch: Fetch = (...args) => fetch(...args),
    private base = "",
  ) {}

  listImages(): Promise<ImageInfo[]> {
    return this.doFetch(`${this.base}/api/images`).then((r) => asJson<ImageInfo[]>(r));
  }

  imageUrl(imageId: string): string {
    return `${this.base}/api/images/${encodeURIComponent(imageId)}`;
  }

  heatmapUrl(db: string, imageId: string): string {
    const q = new URLSearchParams({ db, image_id: imageId });
    return `${this.base}/api/heatmap?${q}`;
  }

  heatmapPeak(db: string, imageId: string): Promise<HeatmapPeak> {
    const q = new URLSearchParams({ db, image_id: imageId, format: "json" });
    return this.doFetch(`${this.base}/api/heatmap?${q}`)
      .then((r) => asJson<{ peak: HeatmapPeak }>(r))
      .then((body) => body.peak);
  }

  getDb(name: string): Promise<DbDocument> {
    return this.doFetch(`${this.base}/api/db/${encodeURIComponent(name)}`).then((r) =>
      asJson<DbDocument>(r),
    );
  }

  track(src: string, u: number, v: number, dst: string): Promise<{ u_star: number; v_star: number; similarity: number }> {
    const q = new URLSearchParams({ src, u: String(u), v: String(v), dst });
    return this.doFetch(`${this.base}/api/track?${q}`).then((r) =>
      asJson<{ u_star: number; v_star: number; similarity: number }>(r),
    );
  }

  annotate(db: string, imageId: string, u: number, v: number, label: string): Promise<KeypointEntry> {
    return this.enqueue(() =>
      this.doFetch(`${this.base}/api/db/${encodeURIComponent(db)}/keypoints`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ image_id: imageId, u, v, label }),
      }).then((r) => asJson<KeypointEntry>(r)),
    );
  }

  deleteKeypoint(db: string, label: string): Promise<{ deleted: string }> {
    return this.enqueue(() =>
      this.doFetch(
        `${this.base}/api/db/${encodeURIComponent(db)}/keypoints/${encodeURIComponent(label)}`,
        { method: "DELETE" },
      ).then((r) => asJson<{ deleted: string }>(r)),
    );
  }

  /** Chain mutations so only one is in flight; failures don't poison the queue. */
  private enqueue<T>(job: () => Promise<T>): Promise<T> {
    const next = this.queue.then(job, job);
    this.queue = next.catch(() => undefined);
    return next;
  }
}
