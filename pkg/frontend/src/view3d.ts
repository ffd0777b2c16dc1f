// three.js rendering: skeleton bones as line segments, end-effector handles
// as draggable spheres on a y=0 ground grid. All reconstruction state stays
// on the service; this file only draws ViewState.

import * as THREE from "three";
import type { SkeletonMessage, Vec3 } from "./protocol.js";
import { ViewState } from "./state.js";

const HANDLE_COLOR = 0x27ae60;
const HANDLE_DISABLED = 0x7f8c8d;
const BONE_COLOR = 0x3498db;

export class SkeletonView {
  readonly scene = new THREE.Scene();
  readonly camera: THREE.PerspectiveCamera | THREE.OrthographicCamera;
  private renderer: THREE.WebGLRenderer | null = null;
  private bones: THREE.LineSegments | null = null;
  private bonePositions: Float32Array | null = null;
  private handleMeshes = new Map<string, THREE.Mesh>();
  private joints: SkeletonMessage["skeleton"]["joints"] = [];
  perspective = true;

  constructor(private state: ViewState, canvas?: HTMLCanvasElement) {
    this.camera = new THREE.PerspectiveCamera(50, 16 / 9, 0.01, 100);
    this.camera.position.set(2.2, 1.6, 2.6);
    this.camera.lookAt(0, 0.9, 0);
    this.scene.add(new THREE.AmbientLight(0xffffff, 0.9));
    this.scene.add(new THREE.GridHelper(6, 24, 0x888888, 0xcccccc));
    if (canvas) {
      this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
      this.renderer.setSize(canvas.clientWidth, canvas.clientHeight, false);
    }
  }

  buildSkeleton(msg: SkeletonMessage): void {
    this.joints = msg.skeleton.joints;
    const edgeCount = this.joints.length - 1;
    this.bonePositions = new Float32Array(edgeCount * 6);
    const geometry = new THREE.BufferGeometry();
    geometry.setAttribute("position", new THREE.BufferAttribute(this.bonePositions, 3));
    this.bones = new THREE.LineSegments(
      geometry,
      new THREE.LineBasicMaterial({ color: BONE_COLOR })
    );
    this.scene.add(this.bones);

    for (const [role, handle] of this.state.handles) {
      const mesh = new THREE.Mesh(
        new THREE.SphereGeometry(0.035, 12, 12),
        new THREE.MeshBasicMaterial({ color: HANDLE_COLOR })
      );
      mesh.name = `handle:${role}`;
      mesh.position.set(...handle.position);
      this.scene.add(mesh);
      this.handleMeshes.set(role, mesh);
    }
  }

  /** Push current ViewState into scene objects; call once per render frame. */
  sync(): void {
    if (this.bones && this.bonePositions && this.state.jointWorld.length) {
      let k = 0;
      for (let j = 1; j < this.joints.length; j++) {
        const parent = this.joints[j].parent ?? 0;
        const a = this.state.jointWorld[parent];
        const b = this.state.jointWorld[j];
        this.bonePositions.set(a, k);
        this.bonePositions.set(b, k + 3);
        k += 6;
      }
      (this.bones.geometry.attributes.position as THREE.BufferAttribute).needsUpdate = true;
    }
    for (const [role, mesh] of this.handleMeshes) {
      const handle = this.state.handles.get(role);
      if (!handle) continue;
      mesh.position.set(...handle.position);
      (mesh.material as THREE.MeshBasicMaterial).color.setHex(
        handle.enabled ? HANDLE_COLOR : HANDLE_DISABLED
      );
    }
  }

  handleWorldPosition(role: string): Vec3 | null {
    const mesh = this.handleMeshes.get(role);
    if (!mesh) return null;
    return [mesh.position.x, mesh.position.y, mesh.position.z];
  }

  render(): void {
    this.sync();
    this.renderer?.render(this.scene, this.camera);
  }
}
