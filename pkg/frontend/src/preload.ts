/**
 * Stimulus preloading gate: a trial may not begin until every one of its
 * stimuli is decoded in memory, so no network fetch happens between fixation
 * onset and the response screen.
 */

export interface StimulusBitmap {
  url: string;
  handle: unknown; // ImageBitmap in the browser; raw bytes in tests
}

export type BitmapLoader = (url: string) => Promise<unknown>;

/** Browser loader: fetch and decode into an ImageBitmap. */
export const browserLoader: BitmapLoader = async (url) => {
  const resp = await fetch(url);
  if (!resp.ok) throw new Error(`stimulus fetch failed: ${url} (${resp.status})`);
  return createImageBitmap(await resp.blob());
};

export async function preloadAll(
  urls: string[],
  loader: BitmapLoader,
): Promise<StimulusBitmap[]> {
  return Promise.all(
    urls.map(async (url) => ({ url, handle: await loader(url) })),
  );
}
