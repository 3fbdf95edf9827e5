// Looping playback with seamless A/B switching. All loaded stimuli share one
// playback position: switching stops the current source and starts the next
// at the same offset, so listeners compare the same moment across stimuli.

export class LoopingPlayer {
  private buffers = new Map<string, AudioBuffer>();
  private source: AudioBufferSourceNode | null = null;
  private currentId: string | null = null;
  private startedAt = 0; // context time when the current source began
  private startOffset = 0; // seconds into the buffer at that moment
  private playedSeconds = new Map<string, number>(); // cumulative, for the "full" gate

  constructor(private ctx: AudioContext) {}

  async load(stimulusId: string, url: string): Promise<void> {
    if (this.buffers.has(stimulusId)) return;
    const resp = await fetch(url);
    if (!resp.ok) throw new Error(`failed to fetch stimulus ${stimulusId}: HTTP ${resp.status}`);
    const data = await resp.arrayBuffer();
    const buffer = await this.ctx.decodeAudioData(data);
    this.buffers.set(stimulusId, buffer);
  }

  get playing(): string | null {
    return this.currentId;
  }

  /** Position in seconds within the current loop. */
  position(): number {
    if (this.currentId === null) return this.startOffset;
    const buf = this.buffers.get(this.currentId);
    if (!buf) return 0;
    const elapsed = this.ctx.currentTime - this.startedAt + this.startOffset;
    return elapsed % buf.duration;
  }

  /** Seconds of cumulative playback a stimulus has received. */
  playedFor(stimulusId: string): number {
    let total = this.playedSeconds.get(stimulusId) ?? 0;
    if (this.currentId === stimulusId) {
      total += this.ctx.currentTime - this.startedAt;
    }
    return total;
  }

  /** True once the stimulus has been heard end to end at least once. */
  playedFully(stimulusId: string): boolean {
    const buffer = this.buffers.get(stimulusId);
    return buffer !== undefined && this.playedFor(stimulusId) >= buffer.duration;
  }

  private accumulate(): void {
    if (this.currentId !== null) {
      const prev = this.playedSeconds.get(this.currentId) ?? 0;
      this.playedSeconds.set(this.currentId, prev + (this.ctx.currentTime - this.startedAt));
    }
  }

  /** Start or switch playback, preserving the loop position. */
  switchTo(stimulusId: string): void {
    const buffer = this.buffers.get(stimulusId);
    if (!buffer) throw new Error(`stimulus ${stimulusId} not loaded`);
    const offset = this.position() % buffer.duration;
    this.accumulate();
    this.stopSource();
    const source = this.ctx.createBufferSource();
    source.buffer = buffer;
    source.loop = true;
    source.connect(this.ctx.destination);
    source.start(0, offset);
    this.source = source;
    this.currentId = stimulusId;
    this.startedAt = this.ctx.currentTime;
    this.startOffset = offset;
  }

  stop(): void {
    this.startOffset = this.position();
    this.accumulate();
    this.stopSource();
    this.currentId = null;
  }

  private stopSource(): void {
    if (this.source) {
      try {
        this.source.stop();
      } catch {
        // already stopped
      }
      this.source.disconnect();
      this.source = null;
    }
  }
}
